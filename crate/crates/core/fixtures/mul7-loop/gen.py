import random
import sys

cls, i = sys.argv[1], int(sys.argv[2])
rng = random.Random("%s-%d" % (cls, i))
if cls == "scale":
    print(i, rng.randint(0, 2**32))
else:
    edge = [(0, 0), (1, 0), (1, 1), (2, 2**63), (3, 2**64 - 1)]
    if i <= len(edge):
        print(*edge[i - 1])
    else:
        print(rng.randint(0, 50), rng.randint(0, 2**64 - 1))
