/* Per-step neuron arithmetic of the gated peephole LSTM.
 *
 * Row-major blocks: z is B x 4H (gate order i, f, c, o), everything else is
 * B x H.  Loops are branch-free over contiguous memory so the compiler can
 * use vector exp/tanh.
 */
#ifndef HETSEQ_CELL_H
#define HETSEQ_CELL_H

#include <math.h>

static inline void cell_forward(
    int B, int H, const double *restrict z,
    const double *restrict c_prev, const double *restrict h_prev,
    const double *restrict j,
    const double *restrict w_ic, const double *restrict w_fc, const double *restrict w_oc,
    double *restrict c_new, double *restrict h_new,
    double *restrict gates, double *restrict ctil, double *restrict htil)
{
    for (int b = 0; b < B; b++) {
        const double *zb = z + (long)b * 4 * H;
        const double *cp = c_prev + (long)b * H;
        const double *hp = h_prev + (long)b * H;
        const double *jb = j + (long)b * H;
        double *cn = c_new + (long)b * H;
        double *hn = h_new + (long)b * H;
        const double *zi = zb, *zf = zb + H, *zg = zb + 2 * H, *zo = zb + 3 * H;
        double *gi = gates + (long)b * 4 * H, *gf = gi + H, *gc = gi + 2 * H, *go = gi + 3 * H;
        double *ctb = ctil + (long)b * H;
        double *htb = htil + (long)b * H;
        for (int k = 0; k < H; k++) {
            double c = cp[k];
            double ig = 1.0 / (1.0 + exp(-(zi[k] + w_ic[k] * c)));
            double fg = 1.0 / (1.0 + exp(-(zf[k] + w_fc[k] * c)));
            double gg = tanh(zg[k]);
            double og = 1.0 / (1.0 + exp(-(zo[k] + w_oc[k] * c)));
            double ct = fg * c + ig * gg;
            double ht = og * tanh(ct);
            double jj = jb[k];
            cn[k] = jj * ct + (1.0 - jj) * c;
            hn[k] = jj * ht + (1.0 - jj) * hp[k];
            gi[k] = ig;
            gf[k] = fg;
            gc[k] = gg;
            go[k] = og;
            ctb[k] = ct;
            htb[k] = ht;
        }
    }
}

/* Forward without caching (inference). */
static inline void cell_forward_light(
    int B, int H, const double *restrict z,
    const double *restrict c_prev, const double *restrict h_prev,
    const double *restrict j,
    const double *restrict w_ic, const double *restrict w_fc, const double *restrict w_oc,
    double *restrict c_new, double *restrict h_new)
{
    for (int b = 0; b < B; b++) {
        const double *zb = z + (long)b * 4 * H;
        const double *cp = c_prev + (long)b * H;
        const double *hp = h_prev + (long)b * H;
        const double *jb = j + (long)b * H;
        double *cn = c_new + (long)b * H;
        double *hn = h_new + (long)b * H;
        const double *zi = zb, *zf = zb + H, *zg = zb + 2 * H, *zo = zb + 3 * H;
        for (int k = 0; k < H; k++) {
            double c = cp[k];
            double ig = 1.0 / (1.0 + exp(-(zi[k] + w_ic[k] * c)));
            double fg = 1.0 / (1.0 + exp(-(zf[k] + w_fc[k] * c)));
            double gg = tanh(zg[k]);
            double og = 1.0 / (1.0 + exp(-(zo[k] + w_oc[k] * c)));
            double ct = fg * c + ig * gg;
            double ht = og * tanh(ct);
            double jj = jb[k];
            cn[k] = jj * ct + (1.0 - jj) * c;
            hn[k] = jj * ht + (1.0 - jj) * hp[k];
        }
    }
}

/* One reverse step.  dc/dh hold the gradient w.r.t. the new state on entry
 * and w.r.t. the previous state (excluding the recurrent matmul term) on
 * exit.  Peephole gradients accumulate into dw_*. */
static inline void cell_backward(
    int B, int H,
    const double *restrict c_prev, const double *restrict h_prev,
    const double *restrict j,
    const double *restrict gates, const double *restrict ctil, const double *restrict htil,
    const double *restrict w_ic, const double *restrict w_fc, const double *restrict w_oc,
    double *restrict dc, double *restrict dh,
    double *restrict dz, double *restrict dj,
    double *restrict dw_ic, double *restrict dw_fc, double *restrict dw_oc)
{
    for (int b = 0; b < B; b++) {
        const double *cp = c_prev + (long)b * H;
        const double *hp = h_prev + (long)b * H;
        const double *jb = j + (long)b * H;
        const double *gi = gates + (long)b * 4 * H, *gf = gi + H, *gc = gi + 2 * H, *go = gi + 3 * H;
        const double *ctb = ctil + (long)b * H;
        const double *htb = htil + (long)b * H;
        double *dcb = dc + (long)b * H;
        double *dhb = dh + (long)b * H;
        double *dzi_ = dz + (long)b * 4 * H, *dzf_ = dzi_ + H, *dzg_ = dzi_ + 2 * H, *dzo_ = dzi_ + 3 * H;
        double *djb = dj + (long)b * H;
        for (int k = 0; k < H; k++) {
            double c = cp[k], jj = jb[k];
            double ig = gi[k], fg = gf[k], gg = gc[k], og = go[k];
            double ct = ctb[k];
            double dcn = dcb[k], dhn = dhb[k];
            djb[k] = dcn * (ct - c) + dhn * (htb[k] - hp[k]);
            double dht = jj * dhn;
            double tc = tanh(ct);
            double dct = jj * dcn + dht * og * (1.0 - tc * tc);
            double dzi = dct * gg * ig * (1.0 - ig);
            double dzf = dct * c * fg * (1.0 - fg);
            double dzg = dct * ig * (1.0 - gg * gg);
            double dzo = dht * tc * og * (1.0 - og);
            dcb[k] = (1.0 - jj) * dcn + dct * fg + w_ic[k] * dzi + w_fc[k] * dzf + w_oc[k] * dzo;
            dhb[k] = (1.0 - jj) * dhn;
            dw_ic[k] += dzi * c;
            dw_fc[k] += dzf * c;
            dw_oc[k] += dzo * c;
            dzi_[k] = dzi;
            dzf_[k] = dzf;
            dzg_[k] = dzg;
            dzo_[k] = dzo;
        }
    }
}

#endif
