#include <stdio.h>
#include <string.h>

int main(void) {
    static char line[1 << 21];
    while (fgets(line, sizeof line, stdin)) {
        size_t len = strlen(line);
        if (len && line[len - 1] == '\n')
            line[--len] = '\0';
        for (size_t i = len; i > 1; i--)
            putchar(line[i - 1]);
        putchar('\n');
    }
    return 0;
}
