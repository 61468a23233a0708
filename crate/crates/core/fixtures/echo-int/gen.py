import random
import sys

cls, i = sys.argv[1], int(sys.argv[2])
if cls == "scale":
    print(i)
else:
    edge = [0, 1, 9, 10, 11, 99, 100, 101, 999, 12345]
    if i <= len(edge):
        print(edge[i - 1])
    else:
        print(random.Random("explore-%d" % i).randint(0, 10**5))
