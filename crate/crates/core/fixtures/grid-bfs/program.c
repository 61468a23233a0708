#include <stdio.h>
#include <stdlib.h>

/* Shortest 4-neighbour path from the top-left to the bottom-right cell of an
 * H x W grid ('#' blocked). Rows are allocated one malloc at a time. */
int main(void) {
    int h, w;
    if (scanf("%d %d", &h, &w) != 2 || h <= 0 || w <= 0)
        return 0;
    char **grid = malloc(sizeof(char *) * (h + 2));
    int **dist = malloc(sizeof(int *) * (h + 2));
    for (int y = 0; y < h + 2; y++) {
        grid[y] = malloc(w + 3);
        dist[y] = malloc(sizeof(int) * (w + 2));
        for (int x = 0; x < w + 2; x++) {
            grid[y][x] = '#';
            dist[y][x] = -1;
        }
    }
    char *row = malloc(w + 2);
    for (int y = 1; y <= h; y++) {
        scanf("%s", row);
        for (int x = 1; x <= w; x++)
            grid[y][x] = row[x - 1];
    }
    int *qy = malloc(sizeof(int) * h * w + sizeof(int));
    int *qx = malloc(sizeof(int) * h * w + sizeof(int));
    int head = 0, tail = 0;
    if (grid[1][1] == '.') {
        dist[1][1] = 0;
        qy[tail] = 1;
        qx[tail++] = 1;
    }
    static const int dy[4] = {1, -1, 0, 0}, dx[4] = {0, 0, 1, -1};
    while (head < tail) {
        int y = qy[head], x = qx[head++];
        for (int d = 0; d < 4; d++) {
            int ny = y + dy[d], nx = x + dx[d];
            if (grid[ny][nx] == '.' && dist[ny][nx] < 0) {
                dist[ny][nx] = dist[y][x] + 1;
                qy[tail] = ny;
                qx[tail++] = nx;
            }
        }
    }
    printf("%d\n", dist[h][w]);
    for (int y = 0; y < h + 2; y++) {
        free(grid[y]);
        free(dist[y]);
    }
    free(grid);
    free(dist);
    free(row);
    free(qy);
    free(qx);
    return 0;
}
