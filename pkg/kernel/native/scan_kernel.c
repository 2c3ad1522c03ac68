/* Selective-scan forward kernel behind a C ABI.
 *
 * Recurrence per inner channel d and state n:
 *   h[t] = exp(dt[t,d] * A[d,n]) * h[t-1] + dt[t,d] * B[t,n] * x[t,d]
 *   y[t,d] = sum_n C[t,n] * h[t,d,n]
 *
 * Layout: row-major single-precision buffers, caller-owned; the kernel
 * writes only y. Channel-major loop order (d outer, t inner) keeps the
 * recurrence sequential in t while the n loop vectorizes. Work splits
 * across threads by channel ranges, so every output element is computed
 * by exactly one thread with a fixed operation order: results are
 * bitwise identical for any thread count, and concurrent calls on
 * disjoint buffers are safe (no global state).
 */

#include <math.h>
#include <pthread.h>
#include <stdint.h>
#include <stdlib.h>
#include <string.h>
#include <unistd.h>

#define FAPTP_SCAN_OK 0
#define FAPTP_SCAN_NULL_BUFFER 1
#define FAPTP_SCAN_BAD_DIMS 2
#define FAPTP_SCAN_NONFINITE 3
#define FAPTP_SCAN_BAD_STATE 4
#define FAPTP_SCAN_THREAD_FAIL 5

#define MAX_THREADS 64

static const char *VERSION = "1.0.0";

typedef struct {
    int64_t T, D, N, d0, d1;
    const float *dt, *A, *B, *C, *x;
    float *y;
    int failed;
} scan_job;

static void scan_channels(scan_job *job)
{
    const int64_t T = job->T, D = job->D, N = job->N;
    float *h = (float *)malloc(sizeof(float) * (size_t)N); /* once per worker */
    if (!h) {
        job->failed = 1;
        return;
    }
    for (int64_t d = job->d0; d < job->d1; d++) {
        const float *Ad = job->A + d * N;
        for (int64_t n = 0; n < N; n++)
            h[n] = 0.0f;
        for (int64_t t = 0; t < T; t++) {
            const float dt_td = job->dt[t * D + d];
            const float bx = dt_td * job->x[t * D + d];
            const float *Bt = job->B + t * N;
            const float *Ct = job->C + t * N;
            float acc = 0.0f;
            for (int64_t n = 0; n < N; n++) {
                const float hn = expf(dt_td * Ad[n]) * h[n] + bx * Bt[n];
                h[n] = hn;
                acc += hn * Ct[n];
            }
            job->y[t * D + d] = acc;
        }
    }
    free(h);
}

static void *scan_thread(void *arg)
{
    scan_channels((scan_job *)arg);
    return NULL;
}

static int check_finite(const float *buf, int64_t len)
{
    /* bit-level test: -ffast-math folds isfinite() to true */
    for (int64_t i = 0; i < len; i++) {
        uint32_t bits;
        memcpy(&bits, &buf[i], sizeof bits);
        if ((bits & 0x7f800000u) == 0x7f800000u)
            return 0;
    }
    return 1;
}

int faptp_scan_forward(int64_t T, int64_t D, int64_t N,
                       const float *dt, const float *A, const float *B,
                       const float *C, const float *x, float *y,
                       int threads, int debug_checks)
{
    if (!dt || !A || !B || !C || !x || !y)
        return FAPTP_SCAN_NULL_BUFFER;
    if (T <= 0 || D <= 0 || N <= 0)
        return FAPTP_SCAN_BAD_DIMS;
    if (debug_checks) {
        if (!check_finite(dt, T * D) || !check_finite(A, D * N) ||
            !check_finite(B, T * N) || !check_finite(C, T * N) ||
            !check_finite(x, T * D))
            return FAPTP_SCAN_NONFINITE;
        for (int64_t i = 0; i < T * D; i++)
            if (dt[i] <= 0.0f)
                return FAPTP_SCAN_BAD_STATE;
        for (int64_t i = 0; i < D * N; i++)
            if (A[i] >= 0.0f)
                return FAPTP_SCAN_BAD_STATE;
    }

    if (threads <= 0) {
        long cpus = sysconf(_SC_NPROCESSORS_ONLN);
        threads = cpus > 0 ? (int)cpus : 1;
    }
    if (threads > MAX_THREADS)
        threads = MAX_THREADS;
    if ((int64_t)threads > D)
        threads = (int)D;

    scan_job jobs[MAX_THREADS];
    pthread_t tids[MAX_THREADS];
    const int64_t per = (D + threads - 1) / threads;
    int spawned = 0;
    for (int i = 0; i < threads; i++) {
        int64_t d0 = (int64_t)i * per;
        if (d0 >= D)
            break;
        int64_t d1 = d0 + per < D ? d0 + per : D;
        jobs[i] = (scan_job){T, D, N, d0, d1, dt, A, B, C, x, y, 0};
        if (d1 == D) {
            scan_channels(&jobs[i]); /* last range runs on the caller */
            spawned = i;
            break;
        }
        if (pthread_create(&tids[i], NULL, scan_thread, &jobs[i]) != 0) {
            for (int j = 0; j < i; j++)
                pthread_join(tids[j], NULL);
            return FAPTP_SCAN_THREAD_FAIL;
        }
        spawned = i + 1;
    }
    int failed = 0;
    for (int i = 0; i < spawned; i++) {
        pthread_join(tids[i], NULL);
        failed |= jobs[i].failed;
    }
    failed |= jobs[spawned].failed;
    return failed ? FAPTP_SCAN_THREAD_FAIL : FAPTP_SCAN_OK;
}

const char *faptp_scan_version(void)
{
    return VERSION;
}
