#include <stdio.h>
#include <stdlib.h>

/* Sum of a[i]*a[j] over all pairs i<j, modulo 1e9+7, by direct enumeration. */
#define MOD 1000000007LL

int main(void) {
    int n;
    if (scanf("%d", &n) != 1 || n < 0)
        return 0;
    long long *a = malloc(sizeof(long long) * (n + 1));
    for (int i = 0; i < n; i++) {
        scanf("%lld", &a[i]);
        a[i] %= MOD;
        if (a[i] < 0)
            a[i] += MOD;
    }
    long long s = 0;
    for (int i = 0; i < n; i++)
        for (int j = i + 1; j < n; j++)
            s = (s + a[i] * a[j]) % MOD;
    printf("%lld\n", s);
    free(a);
    return 0;
}
