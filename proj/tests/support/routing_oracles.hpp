#pragma once

// Straight-line, loop-based reference implementations of the routing
// recurrences, written independently of the library (plain vectors, explicit
// index arithmetic, no shared helpers). These are the fixed points the
// vectorized implementations are tested against.

#include <cmath>
#include <vector>

namespace oracle {

struct RouteOut {
    std::vector<double> v; // [N][P][J][D]
    std::vector<double> c; // [N][I][J]
};

// Routing-by-agreement: b=0; iterate { c=softmax_j(b); s=sum_i c*votes;
// v=squash(s); b+=votes.v (skipped on the last pass) }.
// votes laid out [N][P][I][J][D]; coupling shared across P.
inline RouteOut dynamic_route_oracle(const std::vector<double>& votes, int N, int P, int I, int J, int D,
                                     int iterations) {
    std::vector<double> b(static_cast<size_t>(N) * I * J, 0.0);
    std::vector<double> c(static_cast<size_t>(N) * I * J, 0.0);
    std::vector<double> v(static_cast<size_t>(N) * P * J * D, 0.0);
    for (int it = 0; it < iterations; ++it) {
        // c = softmax over j of b
        for (int n = 0; n < N; ++n)
            for (int i = 0; i < I; ++i) {
                double mx = -1e300;
                for (int j = 0; j < J; ++j) {
                    double bij = b[(static_cast<size_t>(n) * I + i) * J + j];
                    if (bij > mx) mx = bij;
                }
                double z = 0.0;
                for (int j = 0; j < J; ++j)
                    z += std::exp(b[(static_cast<size_t>(n) * I + i) * J + j] - mx);
                for (int j = 0; j < J; ++j)
                    c[(static_cast<size_t>(n) * I + i) * J + j] =
                        std::exp(b[(static_cast<size_t>(n) * I + i) * J + j] - mx) / z;
            }
        // s_j = sum_i c_ij u_hat; v = squash(s)
        for (int n = 0; n < N; ++n)
            for (int p = 0; p < P; ++p)
                for (int j = 0; j < J; ++j) {
                    std::vector<double> s(static_cast<size_t>(D), 0.0);
                    for (int i = 0; i < I; ++i)
                        for (int d = 0; d < D; ++d)
                            s[static_cast<size_t>(d)] +=
                                c[(static_cast<size_t>(n) * I + i) * J + j] *
                                votes[((((static_cast<size_t>(n) * P + p) * I + i) * J + j) * D) + d];
                    double n2 = 0.0;
                    for (int d = 0; d < D; ++d) n2 += s[static_cast<size_t>(d)] * s[static_cast<size_t>(d)];
                    double scale = n2 / ((1.0 + n2) * std::sqrt(n2 + 1e-7));
                    for (int d = 0; d < D; ++d)
                        v[(((static_cast<size_t>(n) * P + p) * J + j) * D) + d] = scale * s[static_cast<size_t>(d)];
                }
        // b += u_hat . v, except after the final pass
        if (it + 1 < iterations) {
            for (int n = 0; n < N; ++n)
                for (int i = 0; i < I; ++i)
                    for (int j = 0; j < J; ++j) {
                        double agree = 0.0;
                        for (int p = 0; p < P; ++p)
                            for (int d = 0; d < D; ++d)
                                agree += votes[((((static_cast<size_t>(n) * P + p) * I + i) * J + j) * D) + d] *
                                         v[(((static_cast<size_t>(n) * P + p) * J + j) * D) + d];
                        b[(static_cast<size_t>(n) * I + i) * J + j] += agree;
                    }
        }
    }
    return {v, c};
}

struct SelfRouteOut {
    std::vector<double> out; // [N][J][D]
    std::vector<double> c;   // [N][I][J]
};

// Self-routing: coupling = softmax_j(Wr_i . u_i) per input capsule, votes
// = Wo_i . u_i, activation = |u_i|; output_j = sum_i c*a*vote / sum_i c.
// pose [N][I][E], wr [I][E][J], wo [I][E][J*D].
inline SelfRouteOut self_route_oracle(const std::vector<double>& pose, const std::vector<double>& wr,
                                      const std::vector<double>& wo, int N, int I, int E, int J, int D) {
    std::vector<double> c(static_cast<size_t>(N) * I * J, 0.0);
    std::vector<double> out(static_cast<size_t>(N) * J * D, 0.0);
    for (int n = 0; n < N; ++n) {
        // per-capsule logits, coupling, activation, votes
        std::vector<double> act(static_cast<size_t>(I), 0.0);
        std::vector<double> votes(static_cast<size_t>(I) * J * D, 0.0);
        for (int i = 0; i < I; ++i) {
            std::vector<double> logit(static_cast<size_t>(J), 0.0);
            for (int j = 0; j < J; ++j)
                for (int e = 0; e < E; ++e)
                    logit[static_cast<size_t>(j)] += pose[(static_cast<size_t>(n) * I + i) * E + e] *
                                                     wr[(static_cast<size_t>(i) * E + e) * J + j];
            double mx = -1e300;
            for (int j = 0; j < J; ++j)
                if (logit[static_cast<size_t>(j)] > mx) mx = logit[static_cast<size_t>(j)];
            double z = 0.0;
            for (int j = 0; j < J; ++j) z += std::exp(logit[static_cast<size_t>(j)] - mx);
            for (int j = 0; j < J; ++j)
                c[(static_cast<size_t>(n) * I + i) * J + j] = std::exp(logit[static_cast<size_t>(j)] - mx) / z;
            double n2 = 0.0;
            for (int e = 0; e < E; ++e) {
                double u = pose[(static_cast<size_t>(n) * I + i) * E + e];
                n2 += u * u;
            }
            act[static_cast<size_t>(i)] = std::sqrt(n2 + 1e-7);
            for (int j = 0; j < J; ++j)
                for (int d = 0; d < D; ++d)
                    for (int e = 0; e < E; ++e)
                        votes[((static_cast<size_t>(i) * J + j) * D) + d] +=
                            pose[(static_cast<size_t>(n) * I + i) * E + e] *
                            wo[(static_cast<size_t>(i) * E + e) * (J * D) + (j * D + d)];
        }
        for (int j = 0; j < J; ++j) {
            double den = 0.0;
            for (int i = 0; i < I; ++i) den += c[(static_cast<size_t>(n) * I + i) * J + j];
            for (int d = 0; d < D; ++d) {
                double num = 0.0;
                for (int i = 0; i < I; ++i)
                    num += c[(static_cast<size_t>(n) * I + i) * J + j] * act[static_cast<size_t>(i)] *
                           votes[((static_cast<size_t>(i) * J + j) * D) + d];
                out[((static_cast<size_t>(n) * J + j) * D) + d] = num / den;
            }
        }
    }
    return {out, c};
}

} // namespace oracle
