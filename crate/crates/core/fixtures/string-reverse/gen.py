import random
import string
import sys

cls, i = sys.argv[1], int(sys.argv[2])
rng = random.Random("%s-%d" % (cls, i))
alphabet = string.ascii_letters + string.digits
if cls == "scale":
    print("".join(rng.choice(alphabet) for _ in range(i)))
else:
    edge = ["", "a", "ab", "aba", "hello world", "  padded  "]
    if i <= len(edge):
        print(edge[i - 1])
    else:
        lines = rng.randint(1, 4)
        for _ in range(lines):
            print("".join(rng.choice(alphabet + " ") for _ in range(rng.randint(1, 40))))
