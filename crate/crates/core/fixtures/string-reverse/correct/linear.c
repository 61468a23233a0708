#include <stdio.h>
#include <string.h>

int main(void) {
    static char line[1 << 21];
    while (fgets(line, sizeof line, stdin)) {
        size_t len = strlen(line);
        if (len && line[len - 1] == '\n')
            line[--len] = '\0';
        for (size_t a = 0, b = len ? len - 1 : 0; a < b; a++, b--) {
            char t = line[a];
            line[a] = line[b];
            line[b] = t;
        }
        puts(line);
    }
    return 0;
}
