#include <stdio.h>
#include <stdlib.h>

int main(void) {
    int h, w;
    if (scanf("%d %d", &h, &w) != 2 || h <= 0 || w <= 0)
        return 0;
    int stride = w + 2;
    size_t cells = (size_t)(h + 2) * stride;
    char *grid = malloc(cells + 1);
    int *dist = malloc(sizeof(int) * cells);
    for (size_t c = 0; c < cells; c++) {
        grid[c] = '#';
        dist[c] = -1;
    }
    char *row = malloc(w + 2);
    for (int y = 1; y <= h; y++) {
        scanf("%s", row);
        for (int x = 1; x <= w; x++)
            grid[y * stride + x] = row[x - 1];
    }
    int *q = malloc(sizeof(int) * (cells + 1));
    int head = 0, tail = 0;
    int start = stride + 1, goal = h * stride + w;
    if (grid[start] == '.') {
        dist[start] = 0;
        q[tail++] = start;
    }
    const int step[4] = {stride, -stride, 1, -1};
    while (head < tail) {
        int c = q[head++];
        for (int d = 0; d < 4; d++) {
            int nc = c + step[d];
            if (grid[nc] == '.' && dist[nc] < 0) {
                dist[nc] = dist[c] + 1;
                q[tail++] = nc;
            }
        }
    }
    printf("%d\n", dist[goal]);
    free(grid);
    free(dist);
    free(row);
    free(q);
    return 0;
}
