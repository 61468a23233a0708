import math
import random
import sys

cls, i = sys.argv[1], int(sys.argv[2])
rng = random.Random("%s-%d" % (cls, i))
if cls == "scale":
    side = max(2, 3 * math.isqrt(i))
    h = w = side
    density = 0.2
else:
    shapes = [(1, 1), (1, 5), (5, 1), (2, 2), (3, 3)]
    h, w = shapes[i - 1] if i <= len(shapes) else (rng.randint(1, 12), rng.randint(1, 12))
    density = [0.0, 0.3, 0.5][i % 3]
rows = []
for y in range(h):
    rows.append("".join("#" if rng.random() < density else "." for _ in range(w)))
if cls == "scale":
    # keep the corners open so the search runs
    rows[0] = "." + rows[0][1:]
    rows[-1] = rows[-1][:-1] + "."
print(h, w)
print("\n".join(rows))
