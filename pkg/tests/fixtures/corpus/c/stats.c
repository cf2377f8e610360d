#include <stdio.h>
#include <string.h>

struct pair { int lo, hi; };

static int sign(int x)
{
    if (x < 0)
        return -1;
    else if (x > 0)
        return 1;
    return 0;
}

static struct pair bounds(const int *xs, int n)
{
    struct pair p = { xs[0], xs[0] };
    for (int i = 1; i < n; i++) {
        if (xs[i] < p.lo) p.lo = xs[i];
        if (xs[i] > p.hi) p.hi = xs[i];
    }
    return p;
}

static const char *label(int code)
{
    switch (code) {
    case 0: return "zero";
    case 1: return "one";
    default: break;
    }
    return "many";
}

static void tally(const int *xs, int n, int *counts)
{
    int i = 0;
    memset(counts, 0, 3 * sizeof *counts);
    while (i < n) {
        int s = sign(xs[i++]);
        if (s == 0)
            continue;
        counts[s + 1]++;
        if (counts[2] > 100)
            break;
    }
}

int main(void)
{
    int xs[] = { 3, -1, 0, 7, -5, 2 };
    int counts[3];
    struct pair p = bounds(xs, 6);
    tally(xs, 6, counts);
    printf("%d %d %d %d %s %s\n", p.lo, p.hi, counts[0], counts[2], label(1), label(9));
    return 0;
}
