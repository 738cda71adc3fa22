// placeholder main; replaced once the pipeline modules land
#include <cstdio>

int main() {
    std::puts("mft: not yet wired");
    return 0;
}
