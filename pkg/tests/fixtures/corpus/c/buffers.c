#include <stdio.h>
#include <string.h>

#define N 16

static void fill(char *buf, size_t n, char c)
{
    size_t i;
    for (i = 0; i + 1 < n; i++) {
        buf[i] = c;
    }
    buf[n - 1] = '\0';
}

static size_t count_char(const char *s, char c)
{
    size_t k = 0;
    for (; *s; s++)
        if (*s == c)
            k++;
    return k;
}

static int find(const char *s, char c)
{
    int i;
    for (i = 0; s[i]; i++) {
        if (s[i] == c)
            return i;
    }
    return -1;
}

static void reverse(char *s)
{
    size_t n = strlen(s), i;
    if (n < 2)
        return;
    for (i = 0; i < n / 2; i++) {
        char t = s[i];
        s[i] = s[n - 1 - i];
        s[n - 1 - i] = t;
    }
}

int main(void)
{
    char buf[N];
    char word[] = "energy";
    fill(buf, sizeof buf, 'x');
    reverse(word);
    printf("%zu %d %d %s\n", count_char(buf, 'x'), find(word, 'g'), find(word, 'q'), word);
    return 0;
}
