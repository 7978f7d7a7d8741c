#include <cstdio>

int main() {
    std::puts("homlab: subcommands not wired up yet");
    return 0;
}
