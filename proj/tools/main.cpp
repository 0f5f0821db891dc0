#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "commands.hpp"

using namespace setreg::cli;

namespace {

// "128x96" or "128" -> (height, width)
std::pair<std::size_t, std::size_t> parse_size(const std::string &s) {
    const auto x = s.find('x');
    try {
        if(x == std::string::npos){
            const auto v = std::stoul(s);
            return {v, v};
        }
        return {std::stoul(s.substr(0, x)), std::stoul(s.substr(x + 1))};
    } catch(const std::exception &) {
        throw UsageError("--size must look like HxW, got '" + s + "'");
    }
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Groupwise registration of variable-length image sequences"};
    app.require_subcommand(1);
    std::size_t threads = 0;
    app.add_option("--threads", threads, "Worker threads (default: SETREG_THREADS, else 1)");

    SynthArgs sa;
    std::string size = "128x128";
    auto *synth = app.add_subcommand("synth", "Generate a synthetic dataset with ground truth");
    synth->add_option("--out", sa.out, "Output directory")->required();
    synth->add_option("--cases", sa.cases, "Number of cases");
    synth->add_option("--length", sa.length, "Frames per case");
    synth->add_option("--size", size, "Grid as HxW");
    synth->add_option("--motion-max", sa.motion_max, "Largest displacement in px");
    synth->add_option("--motion", sa.motion_kind, "smooth or translation");
    synth->add_option("--corr-length", sa.correlation_length, "Motion correlation length in px");
    synth->add_option("--noise", sa.noise, "Gaussian noise sigma");
    synth->add_option("--seed", sa.seed, "Dataset seed");

    RegisterArgs ra;
    auto *reg = app.add_subcommand("register", "Register one case");
    reg->add_option("--input", ra.input, "Case directory")->required();
    reg->add_option("--out", ra.out, "Output directory")->required();
    reg->add_option("--agg", ra.agg, "Template aggregation: corr or mean");
    reg->add_option("--features", ra.features, "Feature stream: off or handcrafted");
    reg->add_option("--init", ra.init, "Starting fields: zero or pipeline");
    reg->add_option("--params", ra.params, "Pipeline parameter stem (with --init pipeline)");
    reg->add_option("--io-steps", ra.io_steps, "Refinement steps at full resolution; 0 runs the full pyramid");
    reg->add_option("--scales", ra.scales, "Pyramid levels");
    reg->add_option("--iters", ra.iters, "Iterations per level, coarsest first")->delimiter(',');
    reg->add_option("--step", ra.step, "Step size in pixels of each level");
    reg->add_option("--precision", ra.precision, "single or double");
    reg->add_option("--seed", ra.seed, "Seed");

    EvalArgs ea;
    auto *eval = app.add_subcommand("eval", "Score transforms against a case's masks, landmarks and ground truth");
    eval->add_option("--input", ea.input, "Case directory")->required();
    eval->add_option("--reg", ea.reg, "Registration output directory (omit for identity)");
    eval->add_option("--out", ea.out, "Output directory")->required();

    FitArgs fa;
    std::string mask = "none";
    int label = -1;
    auto *fit = app.add_subcommand("fit", "Voxel-wise T1 fitting with quality maps");
    fit->add_option("--frames", fa.frames, "Frame array stem")->required();
    fit->add_option("--times", fa.times, "times.csv")->required();
    fit->add_option("--mask", mask, "Label array stem, or none");
    fit->add_option("--label", label, "Fit only this label (default: any nonzero)");
    fit->add_option("--thresholds", fa.thresholds, "R2 survival thresholds, ascending")->delimiter(',');
    fit->add_option("--out", fa.out, "Output directory")->required();

    BenchArgs ba;
    auto *bench = app.add_subcommand("bench", "Runtime scaling against sequence length");
    bench->add_option("--lengths", ba.lengths, "Sequence lengths")->delimiter(',');
    bench->add_option("--size", ba.size, "Square grid size");
    bench->add_option("--scales", ba.scales, "Pyramid levels");
    bench->add_option("--iters", ba.iters, "Iterations per level");
    bench->add_option("--seed", ba.seed, "Seed");
    bench->add_option("--out", ba.out, "JSON report path");

    try {
        app.parse(argc, argv);
    } catch(const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch(const CLI::ParseError &e) {
        app.exit(e);
        return 2;
    }

    try {
        if(synth->parsed()){
            std::tie(sa.height, sa.width) = parse_size(size);
            sa.threads = threads;
            cmd_synth(sa);
        } else if(reg->parsed()){
            ra.threads = threads;
            std::cout << cmd_register(ra).dump(2) << "\n";
        } else if(eval->parsed()){
            std::cout << cmd_eval(ea).dump(2) << "\n";
        } else if(fit->parsed()){
            if(mask != "none") fa.mask = mask;
            if(label >= 0) fa.label = label;
            fa.threads = threads;
            std::cout << cmd_fit(fa).dump(2) << "\n";
        } else if(bench->parsed()){
            ba.threads = threads;
            std::cout << cmd_bench(ba).dump(2) << "\n";
        }
    } catch(const UsageError &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch(const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
