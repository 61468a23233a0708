#include <stdio.h>
#include <stdlib.h>
#include <string.h>

/* Reverses each input line, rebuilding the output one character at a time. */
int main(void) {
    static char line[1 << 21];
    while (fgets(line, sizeof line, stdin)) {
        size_t len = strlen(line);
        if (len && line[len - 1] == '\n')
            line[--len] = '\0';
        char *out = malloc(len + 1);
        out[0] = '\0';
        for (size_t i = 0; i < len; i++) {
            size_t cur = strlen(out);
            out[cur] = line[len - 1 - i];
            out[cur + 1] = '\0';
        }
        puts(out);
        free(out);
    }
    return 0;
}
