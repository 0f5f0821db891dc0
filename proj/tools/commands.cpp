#include "commands.hpp"

#include <chrono>
#include <cstdio>
#include <iomanip>
#include <sstream>

#include "png_export.hpp"
#include "setreg/engine.hpp"
#include "setreg/io.hpp"
#include "setreg/metrics.hpp"
#include "setreg/pipeline.hpp"
#include "setreg/qmap.hpp"
#include "setreg/synth.hpp"

namespace setreg::cli {

using json = nlohmann::json;

namespace {

std::string case_name(std::size_t i) {
    std::ostringstream s;
    s << "case_" << std::setw(3) << std::setfill('0') << i;
    return s.str();
}

void ensure_dir(const fs::path &p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if(ec) throw std::runtime_error("cannot create directory " + p.string() + ": " + ec.message());
}

void require_file(const fs::path &p) {
    if(!fs::exists(p)) throw std::runtime_error("missing input: " + p.string());
}

Sequence<float> load_sequence(const fs::path &case_dir) {
    require_file(case_dir / "frames.f32");
    auto frames = io::load_frames(case_dir / "frames");
    std::vector<FrameMeta> meta;
    if(fs::exists(case_dir / "times.csv")){
        const auto t = io::load_times(case_dir / "times.csv");
        if(t.size() != frames.size()) throw std::runtime_error("times.csv length does not match the frame count");
        for(std::size_t i = 0; i < t.size(); ++i) meta.push_back({t[i], "frame" + std::to_string(i)});
    }
    return Sequence<float>(std::move(frames), std::move(meta));
}

template <class T>
std::string loss_csv(const RegistrationResult<T> &r) {
    std::string s = "iteration,scale,total,cte_image,cte_feature,smooth,cyclic\n";
    for(std::size_t k = 0; k < r.loss_history.size(); ++k){
        const auto &l = r.loss_history[k];
        s += std::to_string(k) + "," + std::to_string(r.history_scale[k]) + "," + io::format_g17(l.total) + "," +
             io::format_g17(l.cte_image) + "," + io::format_g17(l.cte_feature) + "," + io::format_g17(l.smooth) + "," +
             io::format_g17(l.cyclic) + "\n";
    }
    return s;
}

template <class T>
json run_registration(const Sequence<float> &input, const OptimConfig &cfg, const RegisterArgs &a, const fs::path &out) {
    Sequence<T> seq;
    for(const auto &f : input.frames) seq.frames.push_back(f.template cast<T>());
    seq.meta = input.meta;

    std::optional<TransformSet<T>> init;
    if(a.init == "pipeline"){
        const auto params = a.params.empty() ? init_params<T>(PipelineSpec{cfg.scales, 16, a.seed}) : io::load_params<T>(a.params);
        init = forward(seq, params, resolve_threads(cfg.threads));
    }
    OptimConfig run = cfg;
    if(a.io_steps > 0){
        // refinement: finest level only, fixed step count
        run.scales = 1;
        run.iters_per_scale = {a.io_steps};
    }
    const auto res = init ? register_with_init(seq, run, *init) : register_group(seq, run);
    if(!res.loss_history.empty() && !std::isfinite(res.loss_history.back().total)){
        throw std::runtime_error("registration produced a non-finite loss");
    }

    io::save_transforms(out / "transforms", res.transforms);
    std::vector<Image<T>> warped;
    for(std::size_t i = 0; i < seq.length(); ++i) warped.push_back(warp_image(seq.frames[i], res.transforms.fields[i]));
    io::save_frames(out / "warped", warped);
    io::write_text(out / "loss.csv", loss_csv(res));
    json w = {{"aggregation", a.agg}, {"image", res.weights.w}, {"feature", res.feature_weights.w}};
    io::write_json(out / "weights.json", w);

    json summary;
    summary["iterations"] = res.loss_history.size();
    summary["initial_loss"] = res.loss_history.empty() ? 0.0 : res.loss_history.front().total;
    summary["final_loss"] = res.loss_history.empty() ? 0.0 : res.loss_history.back().total;
    summary["final_step_size"] = res.final_step_size;
    summary["weights"] = res.weights.w;
    return summary;
}

std::vector<std::uint8_t> present_labels(const std::vector<LabelMask> &masks) {
    std::vector<bool> seen(256, false);
    for(const auto &m : masks) for(auto l : m.labels) seen[l] = true;
    std::vector<std::uint8_t> out;
    for(int l = 1; l < 256; ++l) if(seen[static_cast<std::size_t>(l)]) out.push_back(static_cast<std::uint8_t>(l));
    return out;
}

} // namespace

void cmd_synth(const SynthArgs &a) {
    if(a.out.empty()) throw UsageError("--out is required");
    if(a.length < 2) throw UsageError("--length must be at least 2");
    if(a.cases < 1) throw UsageError("--cases must be at least 1");
    if(a.height < 64 || a.width < 64) throw UsageError("--size must be at least 64x64");
    if(!(a.noise >= 0.0)) throw UsageError("--noise must be nonnegative");
    if(!(a.motion_max >= 0.0)) throw UsageError("--motion-max must be nonnegative");
    if(a.correlation_length < 4.0) throw UsageError("--corr-length must be at least 4");
    if(a.motion_kind != "smooth" && a.motion_kind != "translation") throw UsageError("--motion must be smooth or translation");

    ensure_dir(a.out);
    const auto times = default_times(a.length);
    std::vector<std::string> names(a.cases);
    std::vector<std::string> errors(a.cases);
    parallel_for(a.cases, resolve_threads(a.threads), [&](std::size_t c){
        try {
            // per-case seeds derived from the dataset seed
            const std::uint64_t cs = a.seed * 1000003ULL + c;
            const auto ph = make_phantom(a.height, a.width, cs);
            MotionModel mm;
            mm.kind = a.motion_kind == "smooth" ? MotionKind::smooth_random : MotionKind::translation;
            mm.max_magnitude = a.motion_max;
            mm.correlation_length = a.correlation_length;
            mm.seed = cs;
            const auto sim = simulate_sequence(ph, times, a.noise, mm, cs);
            const auto dir = a.out / case_name(c);
            ensure_dir(dir);
            io::save_frames(dir / "frames", sim.frames.frames);
            io::save_transforms(dir / "truth", sim.truth);
            io::save_transforms(dir / "motion", sim.motion);
            io::save_masks(dir / "masks", sim.masks);
            io::save_u8(dir / "labels", ph.labels.labels, {a.height, a.width});
            io::save_landmarks(dir / "landmarks.csv", sim.landmarks);
            io::save_times(dir / "times.csv", times);
            json m = {{"case", case_name(c)},     {"seed", cs},          {"length", a.length},
                      {"height", a.height},       {"width", a.width},    {"noise_sigma", a.noise},
                      {"motion", a.motion_kind},  {"motion_max", a.motion_max},
                      {"correlation_length", a.correlation_length},
                      {"labels", {{"background", 0}, {"blood", 1}, {"myocardium", 2}, {"band", 3}}},
                      {"files", {"frames", "truth", "motion", "masks", "labels", "landmarks.csv", "times.csv"}}};
            io::write_json(dir / "manifest.json", m);
            names[c] = case_name(c);
        } catch(const std::exception &e) {
            errors[c] = e.what();
        }
    });
    for(const auto &e : errors) if(!e.empty()) throw std::runtime_error(e);
    io::write_json(a.out / "manifest.json", json{{"cases", names}, {"seed", a.seed}, {"length", a.length},
                                                 {"height", a.height}, {"width", a.width}, {"noise_sigma", a.noise},
                                                 {"motion", a.motion_kind}, {"motion_max", a.motion_max}});
}

json cmd_register(const RegisterArgs &a) {
    if(a.input.empty() || a.out.empty()) throw UsageError("--input and --out are required");
    if(a.agg != "corr" && a.agg != "mean") throw UsageError("--agg must be corr or mean");
    if(a.features != "off" && a.features != "handcrafted") throw UsageError("--features must be off or handcrafted");
    if(a.init != "zero" && a.init != "pipeline") throw UsageError("--init must be zero or pipeline");
    if(a.precision != "single" && a.precision != "double") throw UsageError("--precision must be single or double");

    OptimConfig cfg;
    cfg.scales = a.scales;
    if(!a.iters.empty()) cfg.iters_per_scale = a.iters;
    else if(a.scales != 4) cfg.iters_per_scale.assign(a.scales, 100);
    cfg.step_size = a.step;
    cfg.aggregation = a.agg == "corr" ? Aggregation::correlation : Aggregation::mean;
    cfg.use_features = a.features == "handcrafted";
    cfg.precision = a.precision == "single" ? Precision::single : Precision::dual;
    cfg.seed = a.seed;
    cfg.threads = a.threads;
    try {
        cfg.validate();
    } catch(const std::invalid_argument &e) {
        throw UsageError(e.what());
    }

    const auto seq = load_sequence(a.input);
    ensure_dir(a.out);
    const auto t0 = std::chrono::steady_clock::now();
    json summary = cfg.precision == Precision::single ? run_registration<float>(seq, cfg, a, a.out)
                                                      : run_registration<double>(seq, cfg, a, a.out);
    summary["wall_time_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

    json echo = {{"input", a.input.string()},
                 {"agg", a.agg},
                 {"features", a.features},
                 {"init", a.init},
                 {"io_steps", a.io_steps},
                 {"precision", a.precision},
                 {"scales", cfg.scales},
                 {"iters_per_scale", cfg.iters_per_scale},
                 {"step_size", cfg.step_size},
                 {"warmup_iters", cfg.warmup_iters},
                 {"anneal", cfg.anneal},
                 {"loss_weights", {{"lambda_f", cfg.loss_weights.lambda_f}, {"lambda_s", cfg.loss_weights.lambda_s},
                                   {"lambda_c", cfg.loss_weights.lambda_c}}},
                 {"hist", {{"bins", cfg.hist.bins}, {"kernel_sigma", cfg.hist.kernel_sigma}}},
                 {"seed", cfg.seed}};
    if(!a.params.empty()) echo["params"] = a.params.string();
    io::write_json(a.out / "config.json", echo);
    return summary;
}

json cmd_eval(const EvalArgs &a) {
    if(a.input.empty() || a.out.empty()) throw UsageError("--input and --out are required");
    const auto seq = load_sequence(a.input);
    const std::size_t L = seq.length(), H = seq.height(), W = seq.width();

    TransformSet<double> t = TransformSet<double>::zeros(L, H, W);
    AggregationWeights w = uniform_weights(L);
    if(!a.reg.empty()){
        require_file(a.reg / "transforms.f32");
        t = io::load_transforms(a.reg / "transforms").cast<double>();
        if(fs::exists(a.reg / "weights.json")){
            const auto j = io::read_json(a.reg / "weights.json");
            const auto v = j.at("image").get<std::vector<double>>();
            if(v.size() == L) w.w = v;
        }
    }
    if(t.length() != L || t.height() != H || t.width() != W){
        throw std::runtime_error("transforms do not match the case grid");
    }

    json m;
    m["frames"] = L;
    const auto js = jacobian_stats(t);
    m["log_det_j_std"] = js.log_det_std;
    m["folding_ratio"] = js.folding_ratio;
    if(fs::exists(a.input / "masks.u8")){
        const auto masks = io::load_masks(a.input / "masks");
        if(masks.size() != L || masks.front().height != H || masks.front().width != W){
            throw std::runtime_error("masks do not match the case grid");
        }
        const auto warped = warp_masks(masks, t);
        json d = json::object();
        for(auto l : present_labels(masks)){
            const auto s = all_pair_dice(warped, l);
            d[std::to_string(l)] = {{"mean", s.mean}, {"sd", s.sd}};
        }
        m["all_pair_dice"] = d;
    }
    if(fs::exists(a.input / "landmarks.csv")){
        m["tre"] = tre(io::load_landmarks(a.input / "landmarks.csv"), t, w);
    }
    if(fs::exists(a.input / "truth.f32")){
        const auto truth = io::load_transforms(a.input / "truth").cast<double>();
        if(truth.length() != L || truth.height() != H || truth.width() != W){
            throw std::runtime_error("ground truth does not match the case grid");
        }
        m["endpoint_error"] = relative_endpoint_error(t, truth);
    }

    ensure_dir(a.out);
    io::write_json(a.out / "metrics.json", m);
    std::string csv = "metric,value\n";
    csv += "log_det_j_std," + io::format_g17(m["log_det_j_std"].get<double>()) + "\n";
    csv += "folding_ratio," + io::format_g17(m["folding_ratio"].get<double>()) + "\n";
    if(m.contains("all_pair_dice")){
        for(const auto &[label, v] : m["all_pair_dice"].items()){
            csv += "dice_" + label + "_mean," + io::format_g17(v["mean"].get<double>()) + "\n";
            csv += "dice_" + label + "_sd," + io::format_g17(v["sd"].get<double>()) + "\n";
        }
    }
    if(m.contains("tre")) csv += "tre," + io::format_g17(m["tre"].get<double>()) + "\n";
    if(m.contains("endpoint_error")) csv += "endpoint_error," + io::format_g17(m["endpoint_error"].get<double>()) + "\n";
    io::write_text(a.out / "metrics.csv", csv);
    return m;
}

json cmd_fit(const FitArgs &a) {
    if(a.frames.empty() || a.times.empty() || a.out.empty()) throw UsageError("--frames, --times and --out are required");
    for(std::size_t i = 1; i < a.thresholds.size(); ++i){
        if(a.thresholds[i] < a.thresholds[i - 1]) throw UsageError("--thresholds must be ascending");
    }
    require_file(fs::path(a.frames.string() + ".f32"));
    const Sequence<float> seq(io::load_frames(a.frames));
    const auto times = io::load_times(a.times);
    if(times.size() != seq.length()){
        throw std::runtime_error("times has " + std::to_string(times.size()) + " entries for " + std::to_string(seq.length()) + " frames");
    }
    std::optional<LabelMask> mask;
    if(!a.mask.empty()){
        std::vector<std::size_t> shape;
        const auto d = io::load_u8(a.mask, &shape);
        if(shape.size() != 2 || shape[0] != seq.height() || shape[1] != seq.width()){
            throw std::runtime_error("mask does not match the frame grid");
        }
        mask = LabelMask(shape[0], shape[1]);
        mask->labels = d;
    }
    std::optional<std::uint8_t> label;
    if(a.label){
        if(*a.label < 0 || *a.label > 255) throw UsageError("--label must be in [0, 255]");
        label = static_cast<std::uint8_t>(*a.label);
    }
    const auto r = fit_map(seq, times, mask ? &*mask : nullptr, label, resolve_threads(a.threads));

    ensure_dir(a.out);
    const std::pair<const char *, const Image<double> *> maps[] = {{"A", &r.A},   {"B", &r.B},   {"T1star", &r.T1star},
                                                                   {"t1", &r.t1}, {"r2", &r.r2}, {"sd_t1", &r.sd_t1}};
    for(const auto &[name, img] : maps) io::save_image(a.out / name, *img);

    // fixed display windows, recorded next to the images
    const json windows = {{"t1", {0.0, 3000.0}}, {"T1star", {0.0, 3000.0}}, {"r2", {0.0, 1.0}}, {"sd_t1", {0.0, 200.0}}};
    for(const auto &[name, img] : maps){
        if(!windows.contains(name)) continue;
        const auto win = windows[name];
        tools::write_png(a.out / (std::string(name) + ".png"), *img, win[0].get<double>(), win[1].get<double>());
    }
    io::write_json(a.out / "png.json", json{{"windows", windows}, {"bit_depth", 8}, {"mapping", "linear, clamped"}});

    std::vector<std::uint8_t> sel(r.fitted.labels);
    LabelMask fitted(r.height, r.width);
    fitted.labels = sel;
    const auto curve = r2_survival(r.r2, &fitted, a.thresholds, 1);
    std::string csv = "threshold,fraction\n";
    for(std::size_t i = 0; i < curve.size(); ++i) csv += io::format_g17(a.thresholds[i]) + "," + io::format_g17(curve[i]) + "\n";
    io::write_text(a.out / "survival.csv", csv);

    std::size_t converged = 0;
    for(auto v : r.converged.labels) converged += v;
    json s = {{"fitted_pixels", r.masked_r2.size()},
              {"converged_pixels", converged},
              {"median_r2", r.masked_r2.empty() ? 0.0 : median(r.masked_r2)},
              {"survival", curve},
              {"thresholds", a.thresholds}};
    io::write_json(a.out / "summary.json", s);
    return s;
}

LineFit fit_line(const std::vector<double> &x, const std::vector<double> &y) {
    if(x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit_line: need at least two points");
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for(std::size_t i = 0; i < x.size(); ++i){
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0, syy = 0;
    for(std::size_t i = 0; i < x.size(); ++i){
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    LineFit f;
    f.slope = sxx > 0 ? sxy / sxx : 0.0;
    f.intercept = my - f.slope * mx;
    f.r2 = syy > 0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    return f;
}

json cmd_bench(const BenchArgs &a) {
    if(a.lengths.size() < 2) throw UsageError("--lengths needs at least two values");
    if(a.size < 64) throw UsageError("--size must be at least 64");
    if(a.iters < 1 || a.scales < 1) throw UsageError("--iters and --scales must be positive");

    OptimConfig cfg;
    cfg.scales = a.scales;
    cfg.iters_per_scale.assign(a.scales, a.iters);
    cfg.threads = a.threads;
    cfg.seed = a.seed;
    try {
        cfg.validate();
    } catch(const std::invalid_argument &e) {
        throw UsageError(e.what());
    }

    const auto ph = make_phantom(a.size, a.size, a.seed);
    std::vector<double> xs, ts;
    json runs = json::array();
    for(auto L : a.lengths){
        if(L < 2) throw UsageError("--lengths entries must be at least 2");
        const auto sim = simulate_sequence(ph, default_times(L), 0.02, MotionModel{}, a.seed + L);
        Sequence<float> seq;
        for(const auto &f : sim.frames.frames) seq.frames.push_back(f.cast<float>());
        const auto t0 = std::chrono::steady_clock::now();
        const auto r = register_group(seq, cfg);
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        xs.push_back(static_cast<double>(L));
        ts.push_back(ms);
        runs.push_back({{"length", L}, {"wall_time_ms", ms}, {"aggregation_time_ms", r.aggregation_time_ms},
                        {"aggregation_share", r.aggregation_time_ms / ms}});
    }
    const auto line = fit_line(xs, ts);
    json ratios = json::array();
    for(std::size_t i = 0; i < xs.size(); ++i){
        for(std::size_t j = 0; j < xs.size(); ++j){
            if(xs[j] == 2 * xs[i]) ratios.push_back({{"from", xs[i]}, {"to", xs[j]}, {"time_ratio", ts[j] / ts[i]}});
        }
    }
    json report = {{"size", a.size},
                   {"scales", a.scales},
                   {"iters_per_scale", a.iters},
                   {"threads", resolve_threads(a.threads)},
                   {"runs", runs},
                   {"fit", {{"slope_ms_per_frame", line.slope}, {"intercept_ms", line.intercept}, {"r2", line.r2}}},
                   {"doubling", ratios},
                   {"aggregation_share_at_max_length", runs.back()["aggregation_share"]}};
    if(!a.out.empty()){
        if(a.out.has_parent_path()) ensure_dir(a.out.parent_path());
        io::write_json(a.out, report);
    }
    return report;
}

} // namespace setreg::cli
