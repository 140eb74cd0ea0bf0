#include "hsic/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include "hsic/error.hpp"
#include "hsic/sscl.hpp"

namespace hsic {

namespace fs = std::filesystem;

SweepAxis parse_axis(const std::string& s) {
    if (s == "reduction") return SweepAxis::reduction;
    if (s == "hidden") return SweepAxis::hidden;
    if (s == "temperature") return SweepAxis::temperature;
    throw ConfigError("unknown sweep axis '" + s + "' (expected reduction, hidden or temperature)");
}

std::string to_string(SweepAxis a) {
    switch (a) {
        case SweepAxis::reduction: return "reduction";
        case SweepAxis::hidden: return "hidden";
        case SweepAxis::temperature: return "temperature";
    }
    return "reduction";
}

std::vector<double> axis_values(SweepAxis a) {
    switch (a) {
        case SweepAxis::reduction: return {1.0, 0.5, 0.4, 0.2};
        case SweepAxis::hidden: return {32, 64};
        case SweepAxis::temperature: return {0.01, 0.05, 0.1, 0.5, 1.0};
    }
    return {};
}

RunConfig apply_axis(RunConfig c, SweepAxis axis, double value) {
    switch (axis) {
        case SweepAxis::reduction: c.reduction = value; break;
        case SweepAxis::hidden: c.hidden = static_cast<std::size_t>(value); break;
        case SweepAxis::temperature: c.temperature = value; break;
    }
    c.validate();
    return c;
}

namespace {

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw Error(ErrorCategory::internal, "cannot write " + path.string());
    f << text;
}

std::string sweep_csv(SweepAxis axis, const std::vector<SweepPoint>& points) {
    std::ostringstream os;
    os << to_string(axis) << ",seed,accuracy,test_digest\n";
    for (const auto& p : points) {
        for (const auto& r : p.metrics.seeds) {
            os << fmt("%g", p.value) << ',' << r.seed << ',' << fmt("%.4f", r.accuracy) << ',' << hex(r.test_digest) << '\n';
        }
        os << fmt("%g", p.value) << ",mean," << fmt("%.4f", p.metrics.mean_accuracy) << ",\n";
    }
    return os.str();
}

}  // namespace

std::string sweep_svg(SweepAxis axis, const std::vector<SweepPoint>& points) {
    constexpr double W = 480, H = 320, L = 60, R = 20, T = 20, B = 50;
    double lo = 100.0, hi = 0.0;
    for (const auto& p : points) {
        lo = std::min(lo, p.metrics.mean_accuracy);
        hi = std::max(hi, p.metrics.mean_accuracy);
    }
    if (points.empty()) lo = 0.0, hi = 100.0;
    lo = std::max(0.0, std::floor(lo / 5.0) * 5.0 - 5.0);
    hi = std::min(100.0, std::ceil(hi / 5.0) * 5.0 + 5.0);
    if (hi <= lo) hi = lo + 10.0;
    // Axis values are placed evenly; the reduction and temperature grids are not linear.
    auto x_at = [&](std::size_t i) {
        return points.size() < 2 ? L + (W - L - R) / 2
                                 : L + (W - L - R) * static_cast<double>(i) / static_cast<double>(points.size() - 1);
    };
    auto y_at = [&](double acc) { return T + (H - T - B) * (hi - acc) / (hi - lo); };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    for (double v = lo; v <= hi + 1e-9; v += 5.0) {
        os << "<text x=\"" << L - 6 << "\" y=\"" << fmt("%.1f", y_at(v) + 4) << "\" text-anchor=\"end\">" << fmt("%g", v) << "</text>\n";
    }
    std::string path;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const double x = x_at(i), y = y_at(points[i].metrics.mean_accuracy);
        path += (i ? " L" : "M") + fmt("%.1f", x) + "," + fmt("%.1f", y);
        os << "<circle cx=\"" << fmt("%.1f", x) << "\" cy=\"" << fmt("%.1f", y) << "\" r=\"3\" fill=\"steelblue\"/>\n";
        os << "<text x=\"" << fmt("%.1f", x) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << fmt("%g", points[i].value) << "</text>\n";
    }
    if (!path.empty()) os << "<path d=\"" << path << "\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << to_string(axis) << "</text>\n";
    os << "<text x=\"14\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " << (T + H - B) / 2
       << ")\">mean accuracy (%)</text>\n";
    os << "</svg>\n";
    return os.str();
}

SweepResult run_sweep(const RunConfig& base, SweepAxis axis, const data::PatchSet& set, const SweepOptions& opt) {
    const std::vector<double> values = opt.values ? *opt.values : axis_values(axis);
    const auto allowed = axis_values(axis);
    for (double v : values) {
        if (std::find(allowed.begin(), allowed.end(), v) == allowed.end()) {
            throw ConfigError("value " + fmt("%g", v) + " is not on the " + to_string(axis) + " axis");
        }
    }
    if (axis == SweepAxis::temperature && base.stage == "baseline") {
        throw ConfigError("the temperature axis has no effect on baseline runs");
    }

    std::vector<RunConfig> configs;
    std::vector<RunHandle> handles;
    for (double v : values) {
        configs.push_back(apply_axis(base, axis, v));
        handles.push_back(reserve_run(opt.out, base.stage));
    }

    std::vector<std::optional<RunMetrics>> results(values.size());
    std::vector<std::exception_ptr> errors(values.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < values.size(); i = next++) {
            try {
                ExperimentOptions eo{opt.out, opt.pretrained, handles[i].dir};
                results[i] = run_experiment(configs[i], set, eo);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const unsigned jobs = std::max(1u, std::min<unsigned>(opt.jobs, static_cast<unsigned>(values.size())));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    SweepResult out;
    out.axis = axis;
    std::exception_ptr first;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (results[i]) {
            record_run(opt.out, handles[i], *results[i]);
            out.points.push_back({values[i], std::move(*results[i])});
        } else {
            std::error_code ec;
            fs::remove_all(handles[i].dir, ec);
            if (!first) first = errors[i];
        }
    }
    out.csv = opt.out / ("sweep-" + to_string(axis) + ".csv");
    out.svg = opt.out / ("sweep-" + to_string(axis) + ".svg");
    write_file(out.csv, sweep_csv(axis, out.points));
    write_file(out.svg, sweep_svg(axis, out.points));
    if (first) std::rethrow_exception(first);
    return out;
}

std::size_t export_embeddings(const ckpt::Model& model, const data::PatchSet& set, const fs::path& out_csv) {
    const auto& enc = model.model.encoder;
    if (enc.bands != set.bands || enc.patch_size != set.patch_size) {
        throw CheckpointError("checkpoint encoder expects " + std::to_string(enc.patch_size) + "x" +
                              std::to_string(enc.patch_size) + "x" + std::to_string(enc.bands) + " patches, data has " +
                              std::to_string(set.patch_size) + "x" + std::to_string(set.patch_size) + "x" +
                              std::to_string(set.bands));
    }
    const data::PatchSet norm = data::normalize(set, model.stats);
    if (out_csv.has_parent_path()) fs::create_directories(out_csv.parent_path());
    std::ofstream f(out_csv, std::ios::trunc);
    if (!f) throw Error(ErrorCategory::internal, "cannot write " + out_csv.string());
    const std::size_t width = enc.output_size();
    f << "patch_id,labels";
    for (std::size_t k = 0; k < width; ++k) f << ",h" << k;
    f << '\n';

    constexpr std::size_t kChunk = 512;
    std::vector<std::size_t> idx;
    char buf[32];
    for (std::size_t s = 0; s < norm.size(); s += kChunk) {
        idx.clear();
        for (std::size_t i = s; i < std::min(norm.size(), s + kChunk); ++i) idx.push_back(i);
        const Tensor h = sscl::encode_patches(enc, sscl::gather(norm, idx));
        for (std::size_t r = 0; r < idx.size(); ++r) {
            const auto& p = norm.patches[idx[r]];
            f << idx[r] << ',';
            if (set.task == data::Task::single && p.label_single) {
                f << *p.label_single;
            } else {
                for (std::size_t k = 0; k < p.label_multi.size(); ++k) f << (k ? ";" : "") << p.label_multi[k];
            }
            const float* row = h.data().data() + r * width;
            for (std::size_t k = 0; k < width; ++k) {
                std::snprintf(buf, sizeof buf, ",%.9g", static_cast<double>(row[k]));
                f << buf;
            }
            f << '\n';
        }
    }
    return norm.size();
}

}  // namespace hsic
