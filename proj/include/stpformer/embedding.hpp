#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "stpformer/autograd.hpp"
#include "stpformer/rng.hpp"
#include "stpformer/tensor.hpp"

namespace stpformer {

// Civil-calendar anchor of a series plus its sampling cadence. Step t of the
// series falls at start + t * interval_minutes.
struct TimestampMeta {
    int year = 2016;
    int month = 7;
    int day = 4; // a Monday
    int hour = 0;
    int minute = 0;
    int interval_minutes = 5;

    std::size_t steps_per_day() const {
        return static_cast<std::size_t>(1440 / interval_minutes);
    }
    std::size_t steps_per_week() const { return 7 * steps_per_day(); }

    // ConfigError unless interval divides 1440, the date fields are in range
    // and the start time sits on the sampling grid.
    void validate() const;
};

// Days since 1970-01-01 in the proleptic Gregorian calendar.
long days_from_civil(int y, int m, int d);

// week index (Monday = 0) and intra-day step index of series step t >= 0
std::pair<std::size_t, std::size_t> periodic_indices(const TimestampMeta& meta, long t);

// Fixed positional table, rows = window steps. Column i holds
// sin(t / 10000^(2i/D)) for even i and cos(t / 10000^(2(i-1)/D)) for odd i,
// so each even/odd pair shares one frequency.
Tensor sinusoidal_pe(std::size_t rows, std::size_t dim);

struct EmbeddingParams {
    DualTensor* w_data = nullptr;    // (d_in, D)
    DualTensor* b_data = nullptr;    // (D)
    DualTensor* w_spe = nullptr;     // (k, D)
    DualTensor* b_spe = nullptr;     // (D)
    DualTensor* table_week = nullptr; // (7, D)
    DualTensor* table_day = nullptr;  // (steps_per_day, D)
};

EmbeddingParams make_embedding_params(ParameterStore& store, const std::string& prefix,
                                      std::size_t d_in, std::size_t width, std::size_t k,
                                      std::size_t steps_per_day, Rng& rng);

// U_spe (N,k) -> (N,D) affine projection, identical for every time step
Var spectral_embed(Tape& t, const Tensor& u_spe, const EmbeddingParams& p);

// Broadcast sum of the five components:
//   x_data (B,m,N,D) + spe (N,D) + week (B,m,D) + day (B,m,D) + tpe (m,D)
Var integrate_embeddings(Tape& t, Var x_data, Var spe, Var week, Var day, Var tpe);

// Full embedding of a batch of input windows. x_raw is (B,m,N,d_in) and
// t0[b] is the series index of the first frame of window b.
Var embed_window_batch(Tape& t, const Tensor& x_raw, const std::vector<long>& t0,
                       const TimestampMeta& meta, const Tensor& u_spe,
                       const EmbeddingParams& p);

} // namespace stpformer
