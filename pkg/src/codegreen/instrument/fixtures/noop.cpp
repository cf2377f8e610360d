int main(void) {
    const char *s = getenv("CODEGREEN_CALIBRATION_COUNT");
    long n = s ? atol(s) : 0;
    long i;
    for (i = 0; i < n / 2; i++)
        _cg_end(_cg_begin("noop", &_cg_cnt[0]));
    return 0;
}
