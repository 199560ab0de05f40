#include <cstdio>

int main() {
    std::puts("triview: pipeline subcommands not wired up yet");
    return 1;
}
