def descend(n):
    if n <= 1:
        return 1
    return 1 + descend(n - 1)


if __name__ == "__main__":
    assert descend(10) == 10
