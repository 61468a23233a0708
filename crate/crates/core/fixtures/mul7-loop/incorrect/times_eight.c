#include <stdio.h>

int main(void) {
    unsigned long n, seed;
    if (scanf("%lu %lu", &n, &seed) != 2)
        return 0;
    unsigned long acc = seed;
    for (unsigned long i = 0; i < n; i++) {
        for (int r = 0; r < 64; r++)
            acc = (acc << 3) + (i ^ r);
    }
    printf("%lu\n", acc);
    return 0;
}
