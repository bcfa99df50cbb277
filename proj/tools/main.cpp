#include <cstdio>

int main() {
  std::puts("repometrics: subcommands not wired yet");
  return 0;
}
