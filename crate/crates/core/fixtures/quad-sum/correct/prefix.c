#include <stdio.h>

#define MOD 1000000007LL

int main(void) {
    int n;
    if (scanf("%d", &n) != 1 || n < 0)
        return 0;
    long long s = 0, prefix = 0;
    for (int i = 0; i < n; i++) {
        long long v;
        scanf("%lld", &v);
        v %= MOD;
        if (v < 0)
            v += MOD;
        s = (s + prefix * v) % MOD;
        prefix = (prefix + v) % MOD;
    }
    printf("%lld\n", s);
    return 0;
}
