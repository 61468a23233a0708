#include <stdio.h>

/* Per-base odometer: incrementing updates the digit sum in amortized O(1). */
int main(void) {
    long n;
    if (scanf("%ld", &n) != 1)
        return 0;
    long total = 0;
    for (int base = 2; base <= 17; base++) {
        int digits[64] = {0};
        long ds = 0;
        for (long i = 1; i <= n; i++) {
            int k = 0;
            while (digits[k] == base - 1) {
                digits[k++] = 0;
                ds -= base - 1;
            }
            digits[k]++;
            ds++;
            total += ds;
        }
    }
    printf("%ld\n%ld\n", n, total);
    return 0;
}
