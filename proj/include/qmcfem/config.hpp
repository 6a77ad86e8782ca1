#pragma once

#include <filesystem>
#include <istream>
#include <string>

#include "qmcfem/driver.hpp"

namespace qmcfem {

/// Reads an INI run configuration. Sections and keys:
///
///   [problem]     kind = bip | ocp
///   [mesh]        family = criss_cross | diagonal, divisions, max_dofs
///   [coefficient] family = sine | custom, s, kappa,
///                 psi0 = <constant>, modes = <mode>; <mode>; ...
///                 with <mode> = "sine k1 k2 amplitude" or "box x0 y0 x1 y1 value"
///   [bip]         source, variant = l2 | h1, sigma,
///                 regions = x0 y0 x1 y1 scale; ..., goal = x0 y0 x1 y1 scale,
///                 gamma = diag v1 ... | full g11 g12 ... (row-major),
///                 delta = v1 v2 ... | synthesize, synth_seed, synth_level
///   [ocp]         alpha1, alpha2, theta, f_lo, f_hi, u_hat = fixture | <constant>,
///                 tol, max_iter
///   [estimator]   c_star
///   [qmc]         m0, max_m, alpha, n (negative: 0 for bip, 2 for ocp), c,
///                 beta_scale, lattice_file
///   [adaptive]    tau_fem, tau_qmc, threads
///   [reference]   enabled, levels = l1 l2 ..., samples = n1 n2 ..., seed, batches
///   [output]      dir, timings, samples
///
/// Missing keys keep their defaults; unknown sections or keys, malformed
/// values and failed validation raise ConfigError. Relative file paths are
/// resolved against `base_dir`.
RunConfig parse_config(std::istream& in, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

}  // namespace qmcfem
