#include <stdio.h>

int main(void) {
    int h, w;
    if (scanf("%d %d", &h, &w) != 2 || h <= 0 || w <= 0)
        return 0;
    printf("%d\n", h + w - 2);
    return 0;
}
