#pragma once

#include <cstdio>
#include <ostream>
#include <vector>

#include "mfh/errors.hpp"
#include "mfh/freq_transform.hpp"
#include "mfh/tensor.hpp"
#include "mfh/toy.hpp"

namespace mfh {

struct SweepRow {
  int m = 0;
  double energy_fraction = 0.0;
  double toy_loss = 0.0;
};

// Retention sweep m = 1..n: how much spectral energy the mask keeps, and the
// toy-task loss after a short training run with that retention. Rows are
// ordered by m; energy at m = n is exactly 1.
inline std::vector<SweepRow> sweep_retention(const std::vector<Tensor>& images,
                                             const ToyConfig& base,
                                             int sweep_steps) {
  if (sweep_steps < 1)
    throw ParameterError("sweep: steps must be >= 1");
  const int n = base.patch_size;
  std::vector<Tensor> energy_images = images;
  if (energy_images.empty())
    for (const auto& s : make_toy_batch(base.dataset_seed))
      energy_images.push_back(s.image);

  std::vector<SweepRow> rows;
  for (int m = 1; m <= n; ++m) {
    SweepRow row;
    row.m = m;
    double acc = 0.0;
    for (const auto& img : energy_images)
      acc += retained_energy_fraction(img, n, m);
    row.energy_fraction = acc / static_cast<double>(energy_images.size());
    ToyConfig cfg = base;
    cfg.retain = m;
    cfg.steps = sweep_steps;
    row.toy_loss = train_toy(cfg).back();
    rows.push_back(row);
  }
  return rows;
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "m,energy_fraction,toy_loss\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", r.m, r.energy_fraction,
                  r.toy_loss);
    os << buf;
  }
}

}  // namespace mfh
