// isoplate: run, validate and benchmark isometric plate scenes.
//
// Exit codes: 0 success, 1 invalid scene (or failed bench criterion),
// 2 solver failure.

#include "isoplate/bench.hpp"
#include "isoplate/scene_io.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kSolver = 2;

int run_scene(const std::string& path, const std::string& out_override, bool baseline, bool quiet) {
  const isoplate::LoadedScene ls = isoplate::load_scene(path, baseline);
  const auto& sc = *ls.scene;
  std::filesystem::path out = out_override.empty() ? ls.file.output.directory : out_override;
  if (out_override.empty()) {
    if (out.is_relative()) out = ls.file.base_dir / out;
    if (baseline) out += "_baseline";
  }
  if (!quiet)
    std::printf("loaded %s: %ld points, %zu constraint sets, %ld rows, precompute %.3f s "
                "(neighborhoods %.3f, mls %.3f, laplacian %.3f, factorization %.3f)\n",
                path.c_str(), static_cast<long>(sc.size()), sc.constraints->sets().size(),
                static_cast<long>(sc.constraints->rows()), ls.load_seconds, sc.timings.neighborhoods_s,
                sc.timings.mls_s, sc.timings.laplacian_s, sc.timings.factorization_s);
  const int total = isoplate::step_count(sc);
  const int every = std::max(1, total / 10);
  auto progress = [&](const isoplate::StepRecord& r) {
    if (!quiet && r.step > 0 && (r.step % every == 0 || r.step == total))
      std::printf("step %d/%d t=%.4f fp_iterations=%d max_abs_g=%.3g KE=%.4g\n", r.step, total, r.time,
                  r.report.fp_iterations, r.report.max_abs_g, r.kinetic_energy);
  };
  const auto sum = isoplate::run(sc, ls.file.output, out, progress);
  std::printf("%s: %d steps, %d frames, %d fallbacks, max |g| %.3g, %.2f s -> %s\n",
              baseline ? "baseline" : "run", sum.steps, sum.frames_written, sum.fallbacks, sum.max_abs_g,
              sum.seconds, out.string().c_str());
  return kOk;
}

int validate_scene(const std::string& path, bool print_normalized) {
  const isoplate::LoadedScene ls = isoplate::load_scene(path);
  const auto& sc = *ls.scene;
  // As a comment, so the normalized text still parses.
  if (print_normalized) std::cout << isoplate::serialize(ls.file) << "# " << std::flush;
  std::printf("ok: %ld points, %zu triangles, %zu pins, %zu colliders, %d steps of %.3g s, tolerance %.3g\n",
              static_cast<long>(sc.size()), sc.spec.surface.triangles.size(), sc.spec.pins.size(),
              sc.spec.colliders.size(), isoplate::step_count(sc), sc.spec.dt, sc.spec.projection.tolerance);
  return kOk;
}

int bench(const std::string& suite) {
  bool all_pass = true;
  isoplate::bench::run_suite(suite, [&](const isoplate::bench::CriterionResult& c) {
    std::printf("%s\n", isoplate::bench::line(c).c_str());
    std::fflush(stdout);
    all_pass = all_pass && c.pass;
  });
  return all_pass ? kOk : kInvalid;
}

template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const isoplate::SolveFailure& e) {
    std::fprintf(stderr, "solver failure: %s\n", e.what());
    return kSolver;
  } catch (const isoplate::MaxIterations& e) {
    std::fprintf(stderr, "solver failure: %s\n", e.what());
    return kSolver;
  } catch (const isoplate::Error& e) {
    std::fprintf(stderr, "invalid scene: %s\n", e.what());
    return kInvalid;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kInvalid;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meshless isometric thin-plate simulator"};
  app.require_subcommand(1);

  std::string scene, out, suite;
  bool quiet = false, normalized = false;

  auto* run = app.add_subcommand("run", "Simulate a scene, writing OBJ frames and diagnostics.csv");
  run->add_option("scene", scene, "Scene file")->required();
  run->add_option("-o,--out", out, "Output directory (overrides [output] directory)");
  run->add_flag("-q,--quiet", quiet, "Only print the final summary");

  auto* val = app.add_subcommand("validate", "Parse, validate and precompute a scene without stepping");
  val->add_option("scene", scene, "Scene file")->required();
  val->add_flag("--normalized", normalized, "Print the scene in canonical form");

  auto* bn = app.add_subcommand("bench", "Run acceptance scenes and print one PASS/FAIL line per criterion");
  bn->add_option("suite", suite, "all, pinned, shear or fallback")->required();

  auto* base = app.add_subcommand("baseline", "Run a scene with per-edge length constraints instead of isometry");
  base->add_option("scene", scene, "Scene file")->required();
  base->add_option("-o,--out", out, "Output directory (default: <output directory>_baseline)");
  base->add_flag("-q,--quiet", quiet, "Only print the final summary");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  if (*run) return guarded([&] { return run_scene(scene, out, false, quiet); });
  if (*val) return guarded([&] { return validate_scene(scene, normalized); });
  if (*bn) return guarded([&] { return bench(suite); });
  return guarded([&] { return run_scene(scene, out, true, quiet); });
}
