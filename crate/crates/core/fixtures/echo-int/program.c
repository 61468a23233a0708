#include <stdio.h>

/* Echoes n, then the total digit sum of 1..n summed over bases 2..17. */
static long digit_sum(long v, int base) {
    long s = 0;
    while (v > 0) {
        s += v % base;
        v /= base;
    }
    return s;
}

int main(void) {
    long n;
    if (scanf("%ld", &n) != 1)
        return 0;
    long total = 0;
    for (int base = 2; base <= 17; base++)
        for (long i = 1; i <= n; i++)
            total += digit_sum(i, base);
    printf("%ld\n%ld\n", n, total);
    return 0;
}
