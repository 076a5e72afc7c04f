#include <cstdio>

int main(int, char**) {
  std::fprintf(stderr, "graspcraft: command-line interface not wired up yet\n");
  return 2;
}
