// Batch driver. Exit codes: 0 success, 1 a checked tolerance failed,
// 2 bad command line, bad configuration or memory guard.

#include "fbi/config.hpp"
#include "fbi/spectra.hpp"
#include "fbi/suite.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

using namespace fbi;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  ExperimentConfig cfg;
  std::string config_path;
  fs::path out;
  std::uint64_t seed = 1;
  int refine = 2;
  json summary;
  bool ok = true;

  void check(const std::string& name, double value, double limit, bool upper = true) {
    bool pass = upper ? value <= limit : value >= limit;
    summary["checks"].push_back({{"name", name}, {"value", value}, {"limit", limit},
                                 {"kind", upper ? "max" : "min"}, {"pass", pass}});
    if (!pass) {
      ok = false;
      std::cerr << "tolerance violation: " << name << " = " << value << (upper ? " > " : " < ") << limit << "\n";
    }
  }
};

std::string grid_tag(const GridConfig& g) {
  std::ostringstream os;
  os << "d=" << g.d << " L0=" << g.L0 << " n0=" << g.n0 << " trans=" << g.trans_half_width << "x" << g.trans_n
     << " x=" << g.x_half_width << "x" << g.x_n << " xi=" << g.xi_half_width << "x" << g.xi_n;
  return os.str();
}

std::ofstream open_csv(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os.precision(12);
  return os;
}

double rel_defect(const std::vector<cd>& a, const std::vector<cd>& b) {
  double num = 0, den = 0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    num += std::norm(a[j] - b[j]);
    den += std::norm(b[j]);
  }
  return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

void check_identity(Run& run) {
  const auto& id = run.cfg.identity;
  auto os = open_csv(run.out / "audit.csv");
  os << "transform,function,identity_defect,isometry_defect,grid\n";
  GridSpec space = make_grid(id.dim, id.space_half_width, id.space_n);
  PhaseGrid pg = phase_grid_for(space, id.x_half_width, id.x_n);
  std::ostringstream tag;
  tag << "D=" << id.dim << " space=" << id.space_half_width << "x" << id.space_n << " x=" << id.x_half_width << "x"
      << id.x_n << " xi=dual";
  double wi = 0, wn = 0;
  for (auto& tf : function_suite(id.dim)) {
    auto u = sample(tf.f, space);
    auto Tu = fbi_forward(u, pg);
    auto back = fbi_adjoint(Tu, space);
    double e1 = rel_defect(back.values, u.values), e2 = std::abs(l2_norm(Tu) - l2_norm(u)) / l2_norm(u);
    wi = std::max(wi, e1);
    wn = std::max(wn, e2);
    os << "fbi," << tf.name << ',' << e1 << ',' << e2 << ',' << tag.str() << '\n';
  }
  run.check("identity_defect", wi, id.tolerance);
  run.check("isometry_defect", wn, id.tolerance);
  if (id.partial) {
    auto sp = make_partial_space(1, kPi, id.partial_n0, id.partial_half_width, id.partial_n);
    auto g = make_partial_grid_exact(sp, 0.5, 5.0);
    std::ostringstream pt;
    pt << "d=1 L0=pi n0=" << id.partial_n0 << " trans=" << id.partial_half_width << "x" << id.partial_n
       << " slices=exact";
    double pi = 0, pn = 0;
    for (auto& tf : partial_suite(1)) {
      auto u = sample(tf.f, sp);
      auto v = pfbi_forward(u, g);
      auto back = pfbi_adjoint(v, sp);
      double e1 = rel_defect(back.values, u.values), e2 = std::abs(l2_norm(v) - l2_norm(u)) / l2_norm(u);
      pi = std::max(pi, e1);
      pn = std::max(pn, e2);
      os << "partial," << tf.name << ',' << e1 << ',' << e2 << ',' << pt.str() << '\n';
    }
    run.check("partial_identity_defect", pi, id.tolerance);
    run.check("partial_isometry_defect", pn, id.tolerance);
  }
}

void lift_audit(Run& run) {
  const auto& c = run.cfg;
  auto spec = c.make_transfer();
  auto os = open_csv(run.out / "audit.csv");
  os << "level,check,value,grid\n";
  std::vector<std::pair<std::string, GridConfig>> levels{{"1", c.grid}};
  if (run.refine == 2) levels.push_back({"2", c.fine});
  for (auto& [lvl, gc] : levels) {
    PartialGrid g = ExperimentConfig::partial_grid(gc);
    OperatorMatrix M = lift_kernel(spec, g, g);
    auto dec = decompose(M, c.weight);
    Mat full = M.to_dense();
    double split = (dec.cpt.to_dense() + dec.ctr.to_dense() + dec.hyp.to_dense() - full).cwiseAbs().maxCoeff();
    auto sv = singular_values(dec.cpt);
    write_singular_values_csv(sv, (run.out / ("singular_values_level" + lvl + ".csv")).string());
    const std::size_t w = std::min<std::size_t>(c.lift.decay_window, sv.size());
    double orders = (sv.empty() || sv[0] == 0 || w < 2) ? 0 : std::log10(sv[0] / std::max(sv[w - 1], 1e-300));
    os << lvl << ",split_residual," << split << ',' << grid_tag(gc) << '\n';
    os << lvl << ",compact_decay_orders," << orders << ',' << grid_tag(gc) << '\n';
    os << lvl << ",compact_rank," << sv.size() << ',' << grid_tag(gc) << '\n';
    run.check("split_residual_level" + lvl, split, 1e-12);
    run.check("compact_decay_orders_level" + lvl, orders, c.lift.decay_orders, false);
  }
  // the two kernel forms at random entries of the first level
  PartialGrid g = ExperimentConfig::partial_grid(c.grid);
  const auto& sp = g.space;
  std::mt19937_64 rng(run.seed);
  std::vector<std::pair<cd, cd>> pairs;
  for (int s = 0; s < c.lift.kernel_samples; ++s) {
    int mi = static_cast<int>(rng() % g.n0()), mo = spec.g.flow_constant ? mi : static_cast<int>(rng() % g.n0());
    auto po = g.slices[mo].point(rng() % g.slices[mo].size());
    auto pi = g.slices[mi].point(rng() % g.slices[mi].size());
    cd a = kernel_entry_integrated(spec, sp, sp.trans, po.x, g.frequency(mo), po.xi, pi.x, g.frequency(mi), pi.xi);
    cd b = kernel_entry_direct(spec, sp, sp.trans, {po.x, g.frequency(mo), po.xi}, {pi.x, g.frequency(mi), pi.xi});
    pairs.emplace_back(a, b);
  }
  double scale = 0, worst = 0;
  for (auto& [a, b] : pairs) scale = std::max(scale, std::abs(b));
  for (auto& [a, b] : pairs) worst = std::max(worst, std::abs(a - b) / std::max(scale, 1e-300));
  os << "1,kernel_form_disagreement," << worst << ',' << grid_tag(c.grid) << '\n';
  run.check("kernel_form_disagreement", worst, 1e-5);
  auto audit = kernel_bound_audit(spec, sp, sp.trans, c.lift.rho, c.lift.kernel_samples, 20, run.seed);
  os << "1,kernel_bound_constant," << audit.fitted_constant << ',' << grid_tag(c.grid) << '\n';
  run.summary["kernel_bound_constant"] = audit.fitted_constant;
  run.summary["rho"] = c.lift.rho;
}

void norm_bound(Run& run) {
  const auto& c = run.cfg;
  const auto& nc = c.norm;
  auto os = open_csv(run.out / "norms.csv");
  os << "level,lambda,s,r,d_factor,norm,branch,ratio,converged,cone_ratio,grid\n";
  std::vector<int> ns{nc.n};
  if (run.refine == 2) ns.push_back(nc.n + 8);
  std::vector<double> constants;
  for (std::size_t li = 0; li < ns.size(); ++li) {
    GridSpec grid = make_grid(2 * c.grid.d, nc.half_width, ns[li]);
    std::ostringstream tag;
    tag << "model=" << nc.half_width << "x" << ns[li] << " dim=" << 2 * c.grid.d;
    auto sweep = norm_sweep(c.grid.d, nc.lambdas, nc.s_values, c.weight.r, grid, run.seed);
    for (auto& m : sweep.rows)
      os << li + 1 << ',' << m.lambda << ',' << m.s << ',' << m.r << ',' << m.d_factor << ',' << m.value << ','
         << m.branch << ',' << m.value / m.branch << ',' << m.converged << ',' << m.cone.cone_ratio << ','
         << tag.str() << '\n';
    // unweighted norms
    double worst_unit = 0;
    for (double lam : nc.unit_lambdas) {
      RMat B = hyperbolic_diag(c.grid.d, lam);
      auto m = weighted_norm_measure(B, lam, 1, 0, grid, run.seed);
      os << li + 1 << ',' << lam << ",1,0," << m.d_factor << ',' << m.value << ",1," << m.value << ',' << m.converged
         << ',' << m.cone.cone_ratio << ',' << tag.str() << '\n';
      worst_unit = std::max(worst_unit, std::abs(m.value - 1));
    }
    constants.push_back(sweep.fitted_constant);
    const std::string lvl = std::to_string(li + 1);
    run.summary["levels"].push_back({{"grid", tag.str()}, {"fitted_constant", sweep.fitted_constant},
                                     {"s", sweep.s_values}, {"measured_slope", sweep.measured_slope},
                                     {"branch_slope", sweep.branch_slope}});
    run.check("unweighted_norm_defect_level" + lvl, worst_unit, 0.02);
    for (std::size_t i = 0; i < sweep.s_values.size(); ++i)
      run.check("slope_mismatch_s" + std::to_string(int(sweep.s_values[i])) + "_level" + lvl,
                std::abs(sweep.measured_slope[i] - sweep.branch_slope[i]), nc.slope_tolerance);
  }
  if (constants.size() == 2)
    run.summary["fitted_constant_change"] = std::abs(constants[1] - constants[0]) / constants[0];
}

void partition_audit(Run& run) {
  const auto& c = run.cfg;
  const int d = c.grid.d;
  auto os = open_csv(run.out / "audit.csv");
  os << "check,value,limit,grid\n";
  std::mt19937_64 rng(run.seed);
  std::uniform_real_distribution<double> U(-1, 1);
  double chi_sum = 0, psi_sum = 0, q_sum = 0, triple = 0, qt_sum = 0;
  std::size_t most_active = 0;
  for (int s = 0; s < 1000; ++s) {
    double t = 300 * U(rng);
    double sc = 0;
    for (int n = 0; n < 20; ++n) sc += chi_n(n, t);
    chi_sum = std::max(chi_sum, std::abs(sc - 1));
    double tq = 20 * U(rng), sq = 0;
    for (int k = -25; k <= 25; ++k) sq += q_k(k, tq);
    q_sum = std::max(q_sum, std::abs(sq - 1));
    double tt = 400 * U(rng), st = 0;
    for (int k = -25; k <= 25; ++k) st += q_tilde(k, tt);
    qt_sum = std::max(qt_sum, std::abs(st - 1));
    RVec x(2 * d), xi(2 * d + 1);
    for (auto& v : x) v = 3 * U(rng);
    double scale = std::pow(10.0, 3 * (0.5 * U(rng) + 0.5));
    for (auto& v : xi) v = scale * U(rng);
    auto act = lp_active(x, xi, c.weight.psi_plus);
    double sp = 0;
    for (int m : act) sp += lp_partition(m, x, xi, c.weight.psi_plus);
    most_active = std::max(most_active, act.size());
    psi_sum = std::max(psi_sum, std::abs(sp - 1));
    auto cut = cutoffs(x, xi, c.weight);
    triple = std::max(triple, std::abs(cut.X0 + cut.Xctr * (1 - cut.X0) + cut.Xhyp - 1));
  }
  double sep = fit_slab_separation(40);
  std::string tag = "points=1000 seed=" + std::to_string(run.seed);
  os << "chi_n_sum," << chi_sum << ",1e-10," << tag << '\n';
  os << "lp_partition_sum," << psi_sum << ",1e-10," << tag << '\n';
  os << "q_k_sum," << q_sum << ",1e-10," << tag << '\n';
  os << "q_tilde_sum," << qt_sum << ",1e-10," << tag << '\n';
  os << "cutoff_triple_sum," << triple << ",1e-10," << tag << '\n';
  os << "lp_max_active," << most_active << ",4," << tag << '\n';
  os << "slab_separation_constant," << sep << ",0,kmax=40\n";
  run.check("chi_n_sum", chi_sum, 1e-10);
  run.check("lp_partition_sum", psi_sum, 1e-10);
  run.check("q_k_sum", q_sum, 1e-10);
  run.check("q_tilde_sum", qt_sum, 1e-10);
  run.check("cutoff_triple_sum", triple, 1e-10);
  run.check("lp_max_active", static_cast<double>(most_active), 4);
  run.check("slab_separation_constant", sep, 1e-9, false);
}

void spectrum(Run& run) {
  const auto& c = run.cfg;
  auto spec = c.make_transfer();
  const double margin = c.spectrum.margin;
  PartialGrid g1 = ExperimentConfig::partial_grid(c.grid);
  auto os = open_csv(run.out / "eigenvalues.csv");
  os << "level,index,re,im,abs,bound,grid\n";
  auto dump = [&](const SpectrumReport& r, const std::string& tag) {
    for (std::size_t i = 0; i < r.eigenvalues.size(); ++i)
      os << r.refinement_level << ',' << i << ',' << r.eigenvalues[i].real() << ',' << r.eigenvalues[i].imag() << ','
         << std::abs(r.eigenvalues[i]) << ',' << r.lambda_t_bound << ',' << tag << '\n';
  };
  if (run.refine == 1) {
    auto r = spectrum_at(spec, c.weight, g1, "1", margin);
    dump(r, grid_tag(c.grid));
    run.summary["levels"].push_back(r.to_json());
    run.check("inside_fraction_level1", r.inside_fraction(), c.spectrum.inside_fraction, false);
    return;
  }
  PartialGrid g2 = ExperimentConfig::partial_grid(c.fine);
  auto p = model_spectrum(spec, c.weight, g1, g2, margin);
  dump(p.coarse, grid_tag(c.grid));
  dump(p.fine, grid_tag(c.fine));
  run.summary["levels"].push_back(p.coarse.to_json());
  run.summary["levels"].push_back(p.fine.to_json());
  for (auto& e : p.persistent) run.summary["persistent"].push_back({{"re", e.real()}, {"im", e.imag()}});
  run.summary["persistent_count"] = p.persistent.size();
  run.check("outlier_count_difference",
            std::abs(static_cast<double>(p.coarse.stable_count) - static_cast<double>(p.fine.stable_count)), 0);
  run.check("inside_fraction_level2", p.fine.inside_fraction(), c.spectrum.inside_fraction, false);
}

void lower_bound(Run& run) {
  const auto& c = run.cfg;
  auto spec = c.make_transfer();
  PartialGrid g = ExperimentConfig::partial_grid(c.lower_grid);
  auto r = lower_bound_family(spec, c.weight, g, c.lower.m, c.lower.frequencies);
  auto os = open_csv(run.out / "audit.csv");
  os << "frequency,rayleigh,rayleigh_over_lambda,grid\n";
  auto ld = lambda_delta(spec, g.space, 1.0, c.weight.r);
  for (std::size_t i = 0; i < r.frequencies.size(); ++i)
    os << r.frequencies[i] << ',' << r.rayleigh[i] << ',' << r.rayleigh[i] / ld.Lambda << ','
       << grid_tag(c.lower_grid) << '\n';
  run.summary["center"] = std::vector<double>(r.center.data(), r.center.data() + r.center.size());
  run.summary["rayleigh"] = r.rayleigh;
  run.summary["fitted_c"] = r.fitted_c;
  run.summary["Lambda"] = ld.Lambda;
  run.summary["max_off_diagonal"] = r.max_off_diagonal;
  run.check("gram_off_diagonal", r.max_off_diagonal, c.lower.gram_tolerance);
  run.check("fitted_c", r.fitted_c, 1e-9, false);
}

void central_audit(Run& run) {
  const auto& c = run.cfg;
  const auto& cc = c.central;
  auto spec = c.make_transfer();
  CentralBlockSetup set;
  set.in_ref = make_phase_grid(make_grid(2 * c.grid.d, cc.in_x_half_width, cc.in_x_n),
                               make_grid(2 * c.grid.d, cc.in_xi_half_width, cc.in_xi_n));
  set.out_ref = make_phase_grid(make_grid(2 * c.grid.d, cc.out_x_half_width, cc.out_x_n),
                                make_grid(2 * c.grid.d, cc.out_xi_half_width, cc.out_xi_n));
  set.y_ref = make_grid(2 * c.grid.d, cc.y_half_width, cc.y_n);
  set.weight = c.weight;
  auto os = open_csv(run.out / "audit.csv");
  os << "k,difference,approx_norm,exact_norm,bound,vanishes,grid\n";
  std::ostringstream tag;
  tag << "in=" << cc.in_x_half_width << "x" << cc.in_x_n << "/" << cc.in_xi_half_width << "x" << cc.in_xi_n
      << " out=" << cc.out_x_half_width << "x" << cc.out_x_n << "/" << cc.out_xi_half_width << "x" << cc.out_xi_n
      << " y=" << cc.y_half_width << "x" << cc.y_n << " (scaled by <xi0>, 1/k)";
  double prev = std::numeric_limits<double>::infinity(), c0 = 0;
  bool monotone = true;
  for (double kd : cc.ks) {
    set.k = static_cast<int>(kd);
    auto r = central_block_audit(spec, set, c.lambda);
    os << r.k << ',' << r.difference << ',' << r.approx_norm << ',' << r.exact_norm << ',' << r.bound << ','
       << r.vanishes << ',' << tag.str() << '\n';
    run.summary["blocks"].push_back({{"k", r.k}, {"difference", r.difference}, {"approx_norm", r.approx_norm},
                                     {"exact_norm", r.exact_norm}, {"bound", r.bound}, {"vanishes", r.vanishes}});
    if (r.difference > prev) monotone = false;
    prev = r.difference;
    if (r.bound > 0) c0 = std::max(c0, r.approx_norm / r.bound);
  }
  run.summary["fitted_C0"] = c0;
  run.check("difference_increases", monotone ? 0.0 : 1.0, 0);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wave-packet transforms, anisotropic norms and transfer-operator spectra"};
  app.require_subcommand(1);
  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  int refine = 2;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"check-identity", "resolution of identity and isometry on the function suite"},
      {"lift-audit", "lift kernel split, compact-part decay, kernel forms and kernel bound"},
      {"norm-bound", "weighted norms of the linear model against the lemma bound"},
      {"partition-audit", "partitions of unity, cutoffs and slab separation"},
      {"spectrum", "eigenvalues of the weighted lift at two refinement levels"},
      {"lower-bound", "lower-bound test family: Rayleigh ratios and Gram matrices"},
      {"central-audit", "central block against its linearization"}};
  for (auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "configuration file (key = value sections or JSON)")->required();
    sub->add_option("--out", out_dir, "output directory (default: experiment.output or fbi_out)");
    sub->add_option("--seed", seed, "random seed (overrides experiment.seed)");
    sub->add_option("--refine", refine, "refinement levels to run")->check(CLI::IsMember({1, 2}));
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();

  Run run;
  run.config_path = config_path;
  run.refine = refine;
  try {
    run.cfg = load_experiment(config_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  run.seed = app.get_subcommands().front()->count("--seed") ? seed : run.cfg.seed;
  run.out = !out_dir.empty() ? fs::path(out_dir) : fs::path(run.cfg.output.empty() ? "fbi_out" : run.cfg.output);
  fs::create_directories(run.out);
  run.summary = {{"subcommand", cmd},  {"tag", run.cfg.tag},       {"config", config_path},
                 {"seed", run.seed},   {"refine", run.refine},     {"grid", grid_tag(run.cfg.grid)},
                 {"refined_grid", grid_tag(run.cfg.fine)}, {"weight", {{"r", run.cfg.weight.r}, {"tau", run.cfg.weight.tau},
                                                                   {"N", run.cfg.weight.N}, {"delta", run.cfg.weight.delta},
                                                                   {"chi", "exp-mollifier"}}}};
  auto t0 = std::chrono::steady_clock::now();
  int code = 0;
  try {
    if (cmd == "check-identity") check_identity(run);
    else if (cmd == "lift-audit") lift_audit(run);
    else if (cmd == "norm-bound") norm_bound(run);
    else if (cmd == "partition-audit") partition_audit(run);
    else if (cmd == "spectrum") spectrum(run);
    else if (cmd == "lower-bound") lower_bound(run);
    else if (cmd == "central-audit") central_audit(run);
    code = run.ok ? 0 : 1;
  } catch (const std::length_error& e) {
    std::cerr << "memory guard: " << e.what() << "\n";
    run.summary["error"] = e.what();
    code = 2;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << "\n";
    run.summary["error"] = e.what();
    code = 1;
  }
  run.summary["status"] = code == 0 ? "pass" : "fail";
  run.summary["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ofstream(run.out / "summary.json") << run.summary.dump(2) << "\n";
  std::cout << cmd << ": " << (code == 0 ? "pass" : "fail") << " (" << run.out.string() << "/summary.json)\n";
  return code;
}
