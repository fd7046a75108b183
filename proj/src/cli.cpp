#include "mixquant/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mixquant/analysis.hpp"
#include "mixquant/calibration.hpp"
#include "mixquant/gemm.hpp"
#include "mixquant/mixed.hpp"
#include "mixquant/salience.hpp"

namespace mixquant {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

enum LogLevel { kQuiet = 0, kError = 1, kWarn = 2, kInfo = 3, kDebug = 4 };

int log_level() {
    static const int level = [] {
        const char* env = std::getenv("MIXQUANT_LOG");
        if (!env) return kWarn;
        const std::string v(env);
        if (v == "quiet") return kQuiet;
        if (v == "error") return kError;
        if (v == "warn") return kWarn;
        if (v == "info") return kInfo;
        if (v == "debug") return kDebug;
        return kWarn;
    }();
    return level;
}

void log_info(const std::string& msg) {
    if (log_level() >= kInfo) std::fprintf(stderr, "[mixquant] %s\n", msg.c_str());
}

// Everything configurable from flags or the JSON config file. Precedence:
// CLI flags > config file > these defaults.
struct Cfg {
    std::string model;
    std::string quantized;
    std::string assignment;
    std::string out;
    std::string config;
    double percent = 0.1;
    int group_size = 128;
    int act_bits = 8;
    int weight_bits = 4;
    std::string salience_mode = "aggregated";
    std::string i2f = "fast";
    std::uint64_t seed = 1;
    int workers = 1;
    std::int64_t samples = 32;
    std::vector<int> dims = {32, 64, 64, 8};
    int sensitive_layer = -1;
    double sensitive_factor = 10.0;
    bool scale_f16 = false;
    int block_rows = 32;
    // bench / analyze
    std::int64_t m = 512, n = 4096, k = 4096;
    double bytes_act = 1.0, bytes_weight = 0.5;
    int repeats = 1;
};

void apply_json_config(const fs::path& path, Cfg& cfg) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file '" + path.string() + "'");
    ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw UsageError("malformed config '" + path.string() + "': " + e.what());
    }
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "model") cfg.model = value.get<std::string>();
            else if (key == "quantized") cfg.quantized = value.get<std::string>();
            else if (key == "assignment") cfg.assignment = value.get<std::string>();
            else if (key == "out") cfg.out = value.get<std::string>();
            else if (key == "percent") cfg.percent = value.get<double>();
            else if (key == "group_size") cfg.group_size = value.get<int>();
            else if (key == "act_bits") cfg.act_bits = value.get<int>();
            else if (key == "weight_bits") cfg.weight_bits = value.get<int>();
            else if (key == "salience_mode") cfg.salience_mode = value.get<std::string>();
            else if (key == "i2f") cfg.i2f = value.get<std::string>();
            else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
            else if (key == "workers") cfg.workers = value.get<int>();
            else if (key == "samples") cfg.samples = value.get<std::int64_t>();
            else if (key == "dims") cfg.dims = value.get<std::vector<int>>();
            else if (key == "sensitive_layer") cfg.sensitive_layer = value.get<int>();
            else if (key == "sensitive_factor") cfg.sensitive_factor = value.get<double>();
            else if (key == "scale_f16") cfg.scale_f16 = value.get<bool>();
            else if (key == "block_rows") cfg.block_rows = value.get<int>();
            else if (key == "m") cfg.m = value.get<std::int64_t>();
            else if (key == "n") cfg.n = value.get<std::int64_t>();
            else if (key == "k") cfg.k = value.get<std::int64_t>();
            else if (key == "bytes_act") cfg.bytes_act = value.get<double>();
            else if (key == "bytes_weight") cfg.bytes_weight = value.get<double>();
            else if (key == "repeats") cfg.repeats = value.get<int>();
            else throw UsageError("unknown config key '" + key + "'");
        } catch (const nlohmann::json::exception& e) {
            throw UsageError("config key '" + key + "': " + e.what());
        }
    }
}

void check_common(const Cfg& cfg) {
    if (cfg.percent < 0.0 || cfg.percent > 1.0) {
        throw UsageError("--percent must lie in [0, 1]");
    }
    if (cfg.group_size < 1) throw UsageError("--group-size must be >= 1");
    if (cfg.workers < 1) throw UsageError("--workers must be >= 1");
    if (cfg.act_bits != 8) throw UsageError("--act-bits supports only 8");
    if (cfg.weight_bits != 4 && cfg.weight_bits != 8) {
        throw UsageError("--weight-bits must be 4 or 8");
    }
    if (cfg.samples < 1) throw UsageError("--samples must be >= 1");
}

void check_out_distinct(const Cfg& cfg) {
    if (cfg.out.empty()) return;
    for (const std::string& input : {cfg.model, cfg.quantized}) {
        if (input.empty()) continue;
        std::error_code ec;
        if (fs::weakly_canonical(cfg.out, ec) == fs::weakly_canonical(input, ec)) {
            throw UsageError("--out must differ from input path '" + input + "'");
        }
    }
}

I2FMode parse_i2f(const std::string& name) {
    if (name == "native") return I2FMode::Native;
    if (name == "fast") return I2FMode::Fast;
    throw UsageError("--i2f must be 'native' or 'fast'");
}

SalienceMode parse_salience_mode(const std::string& name) {
    if (name == "aggregated") return SalienceMode::Aggregated;
    if (name == "per-sample") return SalienceMode::PerSample;
    throw UsageError("--salience-mode must be 'aggregated' or 'per-sample'");
}

QuantScheme act_scheme_of(const Cfg& cfg) {
    return QuantScheme{cfg.act_bits, true, cfg.group_size, cfg.scale_f16};
}
QuantScheme largebit_of(const Cfg& cfg) {
    return QuantScheme{8, true, cfg.group_size, cfg.scale_f16};
}
// 4-bit is asymmetric; selecting 8-bit small weights degenerates to the
// symmetric large-bit scheme.
QuantScheme smallbit_of(const Cfg& cfg) {
    return QuantScheme{cfg.weight_bits, cfg.weight_bits == 4 ? false : true,
                       cfg.group_size, cfg.scale_f16};
}

void write_json(const fs::path& path, const ordered_json& j) {
    fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << j.dump(2) << "\n";
}

ordered_json distribution_to_json(const DistributionReport& report) {
    ordered_json j;
    j["format"] = "mixquant-distribution-v1";
    j["global_percent"] = report.global_percent;
    j["total_channels"] = report.total_channels;
    j["promoted_channels"] = report.promoted_channels;
    j["layers"] = ordered_json::array();
    for (const auto& layer : report.layers) {
        j["layers"].push_back(ordered_json{{"name", layer.name},
                                           {"total_channels", layer.total_channels},
                                           {"promoted_channels", layer.promoted_channels},
                                           {"percent", layer.percent}});
    }
    j["classes"] = report.class_percent;
    return j;
}

void print_distribution(const DistributionReport& report) {
    std::printf("%-12s %8s %9s %8s\n", "layer", "channels", "promoted", "percent");
    for (const auto& layer : report.layers) {
        std::printf("%-12s %8lld %9lld %7.2f%%\n", layer.name.c_str(),
                    static_cast<long long>(layer.total_channels),
                    static_cast<long long>(layer.promoted_channels),
                    100.0 * layer.percent);
    }
    std::printf("%-12s %8lld %9lld %7.2f%%\n", "(global)",
                static_cast<long long>(report.total_channels),
                static_cast<long long>(report.promoted_channels),
                100.0 * report.global_percent);
}

ordered_json footprint_to_json(const FootprintReport& report) {
    ordered_json j;
    j["format"] = "mixquant-footprint-v1";
    j["weights_total"] = report.weights_total;
    j["payload_bits"] = report.payload_bits;
    j["overhead_bits"] = report.overhead_bits;
    j["effective_bits_payload"] = report.effective_bits_payload;
    j["effective_bits_with_overhead"] = report.effective_bits_with_overhead;
    j["layers"] = ordered_json::array();
    for (const auto& layer : report.layers) {
        j["layers"].push_back(ordered_json{
            {"name", layer.name},
            {"channels_total", layer.channels_total},
            {"channels_8bit", layer.channels_8bit},
            {"payload_bits", layer.payload_bits},
            {"scale_bits", layer.scale_bits},
            {"zero_point_bits", layer.zero_point_bits},
            {"effective_bits_payload", layer.effective_bits_payload}});
    }
    return j;
}

// Shared search path: dataset, gradients, global search.
PrecisionAssignment run_search(const Cfg& cfg, const ToyModel& model) {
    const auto dataset = make_synthetic_dataset(model.input_dim(), model.num_classes(),
                                                cfg.samples, cfg.seed);
    const SalienceMode mode = parse_salience_mode(cfg.salience_mode);
    const GradientMode gmode = mode == SalienceMode::PerSample
                                   ? GradientMode::PerSample
                                   : GradientMode::Aggregated;
    log_info("computing gradients over " + std::to_string(cfg.samples) + " samples");
    const auto gradients = compute_gradients(model, dataset, gmode, cfg.workers);
    return global_search(model, gradients, smallbit_of(cfg), cfg.percent, mode);
}

int cmd_gen_model(const Cfg& cfg) {
    if (cfg.out.empty()) throw UsageError("gen-model needs --out");
    ToyModelSpec spec;
    spec.dims = cfg.dims;
    spec.seed = cfg.seed;
    spec.sensitive_layer = cfg.sensitive_layer;
    spec.sensitive_factor = cfg.sensitive_factor;
    ToyModel model = ToyModel::generate(spec);
    model.name = "toy";
    for (int d : cfg.dims) model.name += "-" + std::to_string(d);

    std::map<std::string, std::string> metadata;
    metadata["seed"] = std::to_string(cfg.seed);
    std::string dims_str;
    for (std::size_t i = 0; i < cfg.dims.size(); ++i) {
        dims_str += (i ? "," : "") + std::to_string(cfg.dims[i]);
    }
    metadata["dims"] = dims_str;
    if (cfg.sensitive_layer >= 0) {
        metadata["sensitive_layer"] = std::to_string(cfg.sensitive_layer);
        metadata["sensitive_factor"] = std::to_string(cfg.sensitive_factor);
    }
    save_model(toy_model_to_model(model, metadata), cfg.out);
    log_info("wrote model '" + model.name + "' to " + cfg.out);
    std::printf("model %s: %d linear layers, %lld output channels\n", model.name.c_str(),
                model.num_layers(), static_cast<long long>(model.total_out_channels()));
    return 0;
}

int cmd_search(const Cfg& cfg) {
    if (cfg.model.empty()) throw UsageError("search needs --model");
    if (cfg.out.empty()) throw UsageError("search needs --out");
    const ToyModel model = toy_model_from_model(load_model(cfg.model));
    const auto assignment = run_search(cfg, model);
    const auto report = distribution_report(assignment, linear_shapes(model));

    fs::create_directories(cfg.out);
    save_assignment(assignment, fs::path(cfg.out) / "assignment.json");
    write_json(fs::path(cfg.out) / "distribution.json", distribution_to_json(report));
    print_distribution(report);
    return 0;
}

int cmd_quantize(const Cfg& cfg) {
    if (cfg.model.empty()) throw UsageError("quantize needs --model");
    if (cfg.out.empty()) throw UsageError("quantize needs --out");
    const ToyModel model = toy_model_from_model(load_model(cfg.model));
    PrecisionAssignment assignment;
    if (!cfg.assignment.empty()) {
        assignment = load_assignment(cfg.assignment);
    } else {
        assignment = run_search(cfg, model);
    }
    const QuantizedModel qm = quantize_model(model, assignment, act_scheme_of(cfg),
                                             largebit_of(cfg), smallbit_of(cfg));
    save_quantized_model(qm, cfg.out);
    const auto footprint = memory_footprint(linear_shapes(model), assignment,
                                            largebit_of(cfg), smallbit_of(cfg));
    std::printf("quantized %s at %.1f%% 8-bit: %.3f bits/weight payload, %.3f with overhead\n",
                model.name.c_str(), 100.0 * assignment.percent,
                footprint.effective_bits_payload, footprint.effective_bits_with_overhead);
    return 0;
}

int cmd_eval(const Cfg& cfg) {
    if (cfg.model.empty()) throw UsageError("eval needs --model");
    if (cfg.quantized.empty()) throw UsageError("eval needs --quantized");
    const ToyModel model = toy_model_from_model(load_model(cfg.model));
    const QuantizedModel qm = load_quantized_model(cfg.quantized);
    const auto dataset = make_synthetic_dataset(model.input_dim(), model.num_classes(),
                                                cfg.samples, cfg.seed);
    const TileConfig tile{cfg.block_rows, 0};
    const auto result =
        proxy_eval(model, qm, dataset, tile, parse_i2f(cfg.i2f), cfg.workers);

    ordered_json j;
    j["format"] = "mixquant-eval-v1";
    j["model"] = model.name;
    j["percent"] = qm.percent;
    j["samples"] = cfg.samples;
    j["seed"] = cfg.seed;
    j["i2f"] = cfg.i2f;
    j["mean_loss_float"] = result.mean_loss_float;
    j["mean_loss_quant"] = result.mean_loss_quant;
    j["loss_delta"] = result.loss_delta;
    j["logit_mse"] = result.logit_mse;
    if (!cfg.out.empty()) write_json(cfg.out, j);
    std::printf("loss float %.6f | loss quant %.6f | delta %.6e | logit mse %.6e\n",
                result.mean_loss_float, result.mean_loss_quant, result.loss_delta,
                result.logit_mse);
    return 0;
}

int cmd_bench(const Cfg& cfg) {
    const auto result =
        run_bench(cfg.m, cfg.n, cfg.k, cfg.percent, cfg.group_size, parse_i2f(cfg.i2f),
                  cfg.workers, cfg.repeats, cfg.seed);
    ordered_json j;
    j["format"] = "mixquant-bench-v1";
    j["M"] = result.m;
    j["N"] = result.n;
    j["K"] = result.k;
    j["config"] = ordered_json{{"percent", result.percent},
                               {"group_size", result.group_size},
                               {"i2f", cfg.i2f},
                               {"workers", result.workers},
                               {"repeats", result.repeats}};
    j["wall_ms"] = result.wall_ms;
    j["gops"] = result.gops;
    j["checksum"] = result.checksum;
    if (!cfg.out.empty()) write_json(cfg.out, j);
    std::printf("%s\n", j.dump(2).c_str());
    return 0;
}

int cmd_analyze(const Cfg& cfg) {
    if (!cfg.model.empty()) {
        if (cfg.assignment.empty()) {
            throw UsageError("analyze with --model needs --assignment");
        }
        const ToyModel model = toy_model_from_model(load_model(cfg.model));
        const auto assignment = load_assignment(cfg.assignment);
        const auto shapes = linear_shapes(model);
        const auto footprint =
            memory_footprint(shapes, assignment, largebit_of(cfg), smallbit_of(cfg));
        const auto report = distribution_report(assignment, shapes);
        ordered_json j;
        j["format"] = "mixquant-analyze-v1";
        j["footprint"] = footprint_to_json(footprint);
        j["distribution"] = distribution_to_json(report);
        if (!cfg.out.empty()) write_json(cfg.out, j);
        print_distribution(report);
        std::printf("effective bits/weight: %.4f payload, %.4f with overhead\n",
                    footprint.effective_bits_payload,
                    footprint.effective_bits_with_overhead);
        return 0;
    }
    // Pure intensity query.
    IntensityQuery query{cfg.m, cfg.n, cfg.k, cfg.bytes_act, cfg.bytes_weight};
    const double intensity = compute_intensity(query);
    ordered_json j;
    j["format"] = "mixquant-intensity-v1";
    j["M"] = cfg.m;
    j["N"] = cfg.n;
    j["K"] = cfg.k;
    j["bytes_act"] = cfg.bytes_act;
    j["bytes_weight"] = cfg.bytes_weight;
    j["intensity"] = intensity;
    if (!cfg.out.empty()) write_json(cfg.out, j);
    std::printf("%s\n", j.dump(2).c_str());
    return 0;
}

} // namespace

int run_cli(int argc, const char* const* argv) {
    Cfg cfg;
    try {
        // Config file first, so explicit flags override it.
        for (int i = 1; i < argc; ++i) {
            const std::string arg = argv[i];
            if (arg == "--config" && i + 1 < argc) {
                apply_json_config(argv[i + 1], cfg);
            } else if (arg.rfind("--config=", 0) == 0) {
                apply_json_config(arg.substr(9), cfg);
            }
        }

        CLI::App app{"mixquant: mixed-precision weight quantization toolkit"};
        app.require_subcommand(1);

        auto add_common = [&](CLI::App* cmd) {
            cmd->add_option("--config", cfg.config, "JSON config file (flags override it)");
            cmd->add_option("--seed", cfg.seed, "PRNG seed");
            cmd->add_option("--workers", cfg.workers, "worker thread count");
            cmd->add_option("--out", cfg.out, "output file or directory");
        };
        auto add_schemes = [&](CLI::App* cmd) {
            cmd->add_option("--percent", cfg.percent, "fraction of 8-bit output channels");
            cmd->add_option("--group-size", cfg.group_size, "quantization group size");
            cmd->add_option("--act-bits", cfg.act_bits, "activation bit width");
            cmd->add_option("--weight-bits", cfg.weight_bits, "small-bit weight width");
            cmd->add_flag("--scale-f16", cfg.scale_f16, "store scales rounded to float16");
        };
        auto add_dataset = [&](CLI::App* cmd) {
            cmd->add_option("--samples", cfg.samples, "calibration sample count");
        };

        CLI::App* gen = app.add_subcommand("gen-model", "generate a toy model");
        add_common(gen);
        gen->add_option("--dims", cfg.dims, "layer dims, e.g. 32,64,64,8")->delimiter(',');
        gen->add_option("--sensitive-layer", cfg.sensitive_layer,
                        "index of the layer to make quantization-sensitive");
        gen->add_option("--sensitive-factor", cfg.sensitive_factor,
                        "weight magnitude factor for the sensitive layer");

        CLI::App* search = app.add_subcommand("search", "global precision search");
        add_common(search);
        add_schemes(search);
        add_dataset(search);
        search->add_option("--model", cfg.model, "model directory");
        search->add_option("--salience-mode", cfg.salience_mode,
                           "aggregated or per-sample");

        CLI::App* quantize = app.add_subcommand("quantize", "quantize a model");
        add_common(quantize);
        add_schemes(quantize);
        add_dataset(quantize);
        quantize->add_option("--model", cfg.model, "model directory");
        quantize->add_option("--assignment", cfg.assignment,
                             "assignment JSON (otherwise searched)");
        quantize->add_option("--salience-mode", cfg.salience_mode,
                             "aggregated or per-sample");

        CLI::App* eval = app.add_subcommand("eval", "proxy quality evaluation");
        add_common(eval);
        add_dataset(eval);
        eval->add_option("--model", cfg.model, "float model directory");
        eval->add_option("--quantized", cfg.quantized, "quantized model directory");
        eval->add_option("--i2f", cfg.i2f, "integer-to-float mode: native or fast");
        eval->add_option("--block-rows", cfg.block_rows, "engine output row tile");

        CLI::App* bench = app.add_subcommand("bench", "time the reference engine");
        add_common(bench);
        add_schemes(bench);
        bench->add_option("--m", cfg.m, "token count");
        bench->add_option("--n", cfg.n, "output features");
        bench->add_option("--k", cfg.k, "input features");
        bench->add_option("--i2f", cfg.i2f, "integer-to-float mode");
        bench->add_option("--repeats", cfg.repeats, "timing repetitions");

        CLI::App* analyze = app.add_subcommand(
            "analyze", "compute intensity or model footprint/distribution");
        add_common(analyze);
        add_schemes(analyze);
        analyze->add_option("--model", cfg.model, "model directory (footprint mode)");
        analyze->add_option("--assignment", cfg.assignment, "assignment JSON");
        analyze->add_option("--m", cfg.m, "token count (intensity mode)");
        analyze->add_option("--n", cfg.n, "output features");
        analyze->add_option("--k", cfg.k, "input features");
        analyze->add_option("--bytes-act", cfg.bytes_act, "bytes per activation element");
        analyze->add_option("--bytes-weight", cfg.bytes_weight, "bytes per weight element");

        try {
            app.parse(argc, argv);
        } catch (const CLI::CallForHelp& e) {
            return app.exit(e);
        } catch (const CLI::ParseError& e) {
            app.exit(e);
            return 1;
        }

        check_common(cfg);
        check_out_distinct(cfg);

        if (gen->parsed()) return cmd_gen_model(cfg);
        if (search->parsed()) return cmd_search(cfg);
        if (quantize->parsed()) return cmd_quantize(cfg);
        if (eval->parsed()) return cmd_eval(cfg);
        if (bench->parsed()) return cmd_bench(cfg);
        if (analyze->parsed()) return cmd_analyze(cfg);
        throw UsageError("no subcommand given");
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 1;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 3;
    }
}

} // namespace mixquant
