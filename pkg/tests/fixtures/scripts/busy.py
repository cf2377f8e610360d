import sys


def work(scale):
    x = 0
    for i in range(scale * 400_000):
        x = (x * 31 + i) % 1_000_003
    return x


if __name__ == "__main__":
    work(int(sys.argv[1]) if len(sys.argv) > 1 else 1)
