#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace setreg::cli {

namespace fs = std::filesystem;

// Bad arguments: reported with exit code 2. Everything else that throws maps to 1.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SynthArgs {
    fs::path out;
    std::size_t cases = 1;
    std::size_t length = 11;
    std::size_t height = 128;
    std::size_t width = 128;
    double motion_max = 5.0;
    double correlation_length = 24.0;
    std::string motion_kind = "smooth";
    double noise = 0.02;
    std::uint64_t seed = 0;
    std::size_t threads = 0;
};

struct RegisterArgs {
    fs::path input; // case directory
    fs::path out;
    std::string agg = "corr";
    std::string features = "handcrafted";
    std::string init = "zero";
    std::string precision = "single";
    fs::path params; // pipeline parameter stem, used with init = pipeline
    std::size_t io_steps = 0;
    std::size_t scales = 4;
    std::vector<std::size_t> iters; // empty: defaults
    double step = 0.5;
    std::uint64_t seed = 0;
    std::size_t threads = 0;
};

struct EvalArgs {
    fs::path input; // case directory
    fs::path reg;   // registration output directory; empty means identity transforms
    fs::path out;
};

struct FitArgs {
    fs::path frames; // stem of an [L, H, W] f32 array
    fs::path times;  // CSV frame,t_ms
    fs::path mask;   // stem of an [H, W] u8 array; empty means the full frame
    std::optional<int> label;
    fs::path out;
    std::vector<double> thresholds{0.5, 0.6, 0.7, 0.8, 0.85, 0.9, 0.95, 0.98, 0.99};
    std::size_t threads = 0;
};

struct BenchArgs {
    std::vector<std::size_t> lengths{8, 16, 32, 64};
    std::size_t size = 64;
    std::size_t scales = 3;
    std::size_t iters = 20;
    std::uint64_t seed = 0;
    std::size_t threads = 0;
    fs::path out; // optional JSON report path
};

void cmd_synth(const SynthArgs &a);
nlohmann::json cmd_register(const RegisterArgs &a);
nlohmann::json cmd_eval(const EvalArgs &a);
nlohmann::json cmd_fit(const FitArgs &a);
nlohmann::json cmd_bench(const BenchArgs &a);

// Least-squares line through (x, y): slope, intercept, R^2.
struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};
LineFit fit_line(const std::vector<double> &x, const std::vector<double> &y);

} // namespace setreg::cli
