#include <cstdio>
int main() { std::puts("pointlang: not wired up yet"); return 2; }
