import math
import random
import sys

cls, i = sys.argv[1], int(sys.argv[2])
rng = random.Random("%s-%d" % (cls, i))
if cls == "scale":
    n = 30 * math.isqrt(i)
    vals = [rng.randint(0, 10**9) for _ in range(n)]
else:
    edge = [[], [5], [-1, -1], [10**9 + 7, 3], [-(10**9), 10**9, 7]]
    if i <= len(edge):
        vals = edge[i - 1]
    else:
        vals = [rng.randint(-(10**12), 10**12) for _ in range(rng.randint(1, 30))]
print(len(vals))
print(" ".join(map(str, vals)))
