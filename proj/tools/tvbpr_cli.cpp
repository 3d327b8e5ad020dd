// tvbpr: synth / validate / train / eval / export

#include <openssl/evp.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include <nlohmann/json.hpp>
#include "tvbpr/tvbpr.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace tvbpr;

namespace {

constexpr int kOk = 0, kInvalid = 1, kRuntime = 2;

std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path);
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md, &len);
    std::ostringstream hex;
    for (unsigned k = 0; k < len; ++k) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[k]);
    return hex.str();
}

std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

class Stopwatch {
public:
    double lap() {
        const auto now = std::chrono::steady_clock::now();
        const double s = std::chrono::duration<double>(now - last_).count();
        last_ = now;
        return s;
    }

private:
    std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

struct DataPaths {
    std::string interactions, features, taxonomy;
    std::size_t min_actions = 5;

    void add_to(CLI::App* app, bool features_required) {
        app->add_option("--interactions", interactions, "user<TAB>item<TAB>timestamp file")->required()->check(CLI::ExistingFile);
        auto* f = app->add_option("--features", features, "sparse feature file")->check(CLI::ExistingFile);
        if (features_required) f->required();
        app->add_option("--taxonomy", taxonomy, "item<TAB>category file")->check(CLI::ExistingFile);
        app->add_option("--min-actions", min_actions, "drop users with fewer actions")->capture_default_str();
    }
};

struct Data {
    InteractionLog log;
    std::shared_ptr<const FeatureStore> features;
    std::shared_ptr<const Taxonomy> taxonomy;
};

Data load_data(const DataPaths& p, bool need_features) {
    Data d;
    d.log = load_interactions(p.interactions, p.min_actions);
    if (!p.features.empty()) d.features = std::make_shared<const FeatureStore>(load_features(p.features, d.log.items));
    else if (need_features) throw ValidationError("this variant needs --features");
    d.taxonomy = std::make_shared<const Taxonomy>(p.taxonomy.empty() ? flat_taxonomy(d.log.num_items())
                                                                     : load_taxonomy(p.taxonomy, d.log));
    return d;
}

json input_digests(const DataPaths& p) {
    json j = json::object();
    for (const auto& [name, path] : {std::pair<const char*, const std::string&>{"interactions", p.interactions},
                                     {"features", p.features},
                                     {"taxonomy", p.taxonomy}})
        if (!path.empty()) j[name] = {{"path", path}, {"sha256", sha256_file(path)}};
    return j;
}

// ---- synth -------------------------------------------------------------------

int cmd_synth(const std::string& out_dir, const std::string& config_path, const std::map<std::string, std::string>& flags) {
    SynthConfig cfg;
    std::map<std::string, std::string> kv;
    if (!config_path.empty()) kv = read_key_value_file(config_path);
    for (const auto& [k, v] : flags) kv[k] = v;
    // Fractions resolve against the timeline, so they go last.
    std::string fractions;
    for (const auto& [k, v] : kv) {
        if (k == "epoch-fractions") fractions = v;
        else apply_key_value(cfg, k, v);
    }
    cfg.with_epoch_fractions({0.2, 0.5});
    if (!fractions.empty()) apply_key_value(cfg, "epoch-fractions", fractions);
    const auto data = generate(cfg);
    write_dataset(data, out_dir);
    json m;
    m["command"] = "synth";
    for (const auto& [k, v] : to_key_values(cfg)) m["config"][k] = v;
    m["users"] = data.log.num_users();
    m["items_in_log"] = data.log.num_items();
    m["events"] = data.log.interactions.size();
    open_out(fs::path(out_dir) / "synth_manifest.json") << m.dump(2) << '\n';
    std::cerr << "wrote " << data.log.interactions.size() << " events for " << data.log.num_users() << " users and "
              << data.log.num_items() << " items to " << out_dir << '\n';
    return kOk;
}

// ---- validate ------------------------------------------------------------------

int cmd_validate(const DataPaths& p) {
    const auto d = load_data(p, false);
    std::cout << "users\t" << d.log.num_users() << '\n'
              << "items\t" << d.log.num_items() << '\n'
              << "interactions\t" << d.log.interactions.size() << '\n'
              << "t_min\t" << d.log.t_min << '\n'
              << "t_max\t" << d.log.t_max << '\n';
    if (d.features)
        std::cout << "feature_dim\t" << d.features->dim() << '\n'
                  << "feature_density\t" << detail::format_number(d.features->density()) << '\n';
    std::cout << "categories\t" << d.taxonomy->num_categories() << '\n';
    return kOk;
}

// ---- train ---------------------------------------------------------------------

TrainConfig resolve_config(const std::string& config_path, const std::map<std::string, std::string>& flags) {
    TrainConfig cfg;
    if (!config_path.empty())
        for (const auto& [k, v] : read_key_value_file(config_path)) apply_key_value(cfg, k, v);
    for (const auto& [k, v] : flags) apply_key_value(cfg, k, v);
    return cfg;
}

int cmd_train(const DataPaths& p, const std::string& out_dir, const std::string& config_path,
              const std::map<std::string, std::string>& flags) {
    Stopwatch clock;
    json timings;
    auto cfg = resolve_config(config_path, flags);
    const bool pop = cfg.variant.is_pop();
    const auto d = load_data(p, cfg.variant.use_visual);
    if (d.features && cfg.variant.use_visual) cfg.feature_dim = d.features->dim();
    cfg.validate();
    const auto split = split_leave_one_out(d.log, cfg.seed);
    timings["load"] = clock.lap();

    const fs::path out(out_dir);
    fs::create_directories(out);
    Checkpoint ck;
    ck.users = d.log.users;
    ck.items = d.log.items;
    ck.taxonomy = d.taxonomy;
    json result;
    {
        auto log = open_out(out / "train.log");
        if (pop) {
            ck.model.config = cfg;
            ck.model.shape = {split.num_users, split.num_items, d.taxonomy->num_categories()};
            ck.segmentation = uniform_segmentation(make_bins(split.t_min, split.t_max, cfg.bins), 1);
            const auto s = pop_ranking_scores(split, cfg.seed);
            result["val_auc"] =
                auc_exact(split, split.validation, [&s](UserId, ItemId i, Timestamp) { return s[i]; }, AucMode::all).auc;
        } else {
            auto r = coordinate_ascent(split, cfg.variant.use_visual ? d.features : nullptr, d.taxonomy, cfg, &log);
            ck.model = std::move(r.model);
            ck.segmentation = std::move(r.segmentation);
            result["val_auc"] = r.val_auc_exact;
            result["best_iteration"] = r.state.best_iteration;
            result["iterations_run"] = r.state.iteration;
            result["stopped_early"] = r.stopped_early;
        }
    }
    timings["train"] = clock.lap();

    save_checkpoint(ck, (out / "checkpoint.bin").string());
    {
        auto seg = open_out(out / "segments.tsv");
        write_segments(ck.segmentation, seg);
    }
    timings["write"] = clock.lap();

    json m;
    m["command"] = "train";
    for (const auto& [k, v] : to_key_values(ck.model.config)) m["config"][k] = v;
    m["epochs_allocated"] = pop ? 1 : ck.model.num_epochs();
    m["seed"] = cfg.seed;
    m["inputs"] = input_digests(p);
    m["artifacts"] = {{"checkpoint", (out / "checkpoint.bin").string()},
                      {"checkpoint_sha256", sha256_file((out / "checkpoint.bin").string())},
                      {"segments", (out / "segments.tsv").string()},
                      {"log", (out / "train.log").string()}};
    m["result"] = result;
    m["timings_seconds"] = timings;
    open_out(out / "manifest.json") << m.dump(2) << '\n';
    std::cerr << "validation AUC " << result["val_auc"].get<double>() << "; wrote " << out.string() << '\n';
    return kOk;
}

// ---- eval ------------------------------------------------------------------------

void check_maps(const Checkpoint& ck, const InteractionLog& log) {
    if (!(ck.users == log.users) || !(ck.items == log.items))
        throw ValidationError("dataset is incompatible with the checkpoint: user/item ID maps differ (checkpoint " +
                              std::to_string(ck.users.size()) + " users / " + std::to_string(ck.items.size()) +
                              " items, data " + std::to_string(log.num_users()) + " / " + std::to_string(log.num_items()) +
                              ")");
}

void warn_on_changed_inputs(const fs::path& checkpoint, const DataPaths& p) {
    const auto manifest = checkpoint.parent_path() / "manifest.json";
    if (!fs::exists(manifest)) return;
    std::ifstream in(manifest);
    const auto m = json::parse(in, nullptr, false);
    if (m.is_discarded() || !m.contains("inputs")) return;
    const auto now = input_digests(p);
    for (const auto& [name, entry] : m["inputs"].items()) {
        if (!now.contains(name)) continue;
        if (now[name]["sha256"] != entry["sha256"])
            std::cerr << "warning: " << name << " changed since training (sha256 differs from " << manifest.string() << ")\n";
    }
}

int cmd_eval(const DataPaths& p, const std::string& checkpoint, const std::string& out_dir, const std::string& mode,
             bool per_user, unsigned threads) {
    warn_on_changed_inputs(checkpoint, p);
    const auto d = load_data(p, false);
    auto ck = load_checkpoint(checkpoint, d.features);
    check_maps(ck, d.log);
    const auto& cfg = ck.model.config;
    if (cfg.variant.use_visual && !d.features) throw ValidationError("this checkpoint needs --features");
    if (cfg.variant.use_visual && d.features->dim() != cfg.feature_dim)
        throw ValidationError("feature dimension " + std::to_string(d.features->dim()) + " differs from the checkpoint's " +
                              std::to_string(cfg.feature_dim));
    if (ck.taxonomy) ck.model.attach(d.features, ck.taxonomy);
    const auto split = split_leave_one_out(d.log, cfg.seed);

    EvalReport report;
    if (cfg.variant.is_pop()) {
        report = evaluate_pop(split, cfg.seed);
    } else {
        report = evaluate(ck.model, ck.segmentation, split, threads);
    }
    const fs::path out(out_dir);
    fs::create_directories(out);
    {
        auto f = open_out(out / "report.tsv");
        if (mode == "all" || mode == "cold") {
            // single-mode report keeps only the requested block
            std::ostringstream full;
            report.write(full);
            std::istringstream lines(full.str());
            std::string line;
            while (std::getline(lines, line)) {
                const bool other = (mode == "all" && line.find("_cold\t") != std::string::npos) ||
                                   (mode == "cold" && line.find("_all\t") != std::string::npos);
                if (!other) f << line << '\n';
            }
        } else {
            report.write(f);
        }
    }
    if (per_user) {
        auto f = open_out(out / "per_user.csv");
        report.write_per_user_csv(f, ck.users);
    }
    std::cout << "auc_all\t" << detail::format_number(report.all.auc) << "\nauc_cold\t"
              << detail::format_number(report.cold.auc) << '\n';
    return kOk;
}

// ---- export -------------------------------------------------------------------------

struct ExportOptions {
    std::string what, checkpoint, features, out;
    std::size_t top = 10;
    std::string category;
};

int cmd_export(const ExportOptions& o) {
    std::shared_ptr<const FeatureStore> features;
    Checkpoint ck = load_checkpoint(o.checkpoint);
    const auto& m = ck.model;
    if (o.what == "segments") {
        auto f = open_out(o.out);
        write_segments(ck.segmentation, f);
        return kOk;
    }
    if (m.config.variant.is_pop() || !m.variant().use_visual)
        throw UnsupportedOperation("export " + o.what + " needs a visual variant; checkpoint is " + to_string(m.config.variant.kind));
    if (o.what == "weights") {
        auto f = open_out(o.out);
        export_parameters_text(m, f);
        return kOk;
    }
    if (o.what == "styles") {
        auto f = open_out(o.out);
        f << "dimension,epoch,weight\n";
        for (std::size_t k = 0; k < m.visual_dims(); ++k)
            for (std::size_t e = 0; e < m.num_epochs(); ++e) {
                const double w = m.variant().use_temporal_visual ? static_cast<double>(m.epochs[e].weighting[k]) : 1.0;
                f << k << ',' << e << ',' << detail::format_number(w) << '\n';
            }
        return kOk;
    }
    if (o.features.empty()) throw ValidationError("export " + o.what + " needs --features");
    features = std::make_shared<const FeatureStore>(load_features(o.features, ck.items));
    if (features->dim() != m.config.feature_dim) throw ValidationError("feature dimension differs from the checkpoint's");
    ck.model.attach(features, ck.taxonomy);

    std::optional<std::uint32_t> category;
    if (!o.category.empty()) {
        if (!ck.taxonomy) throw ValidationError("checkpoint has no taxonomy");
        const auto& names = ck.taxonomy->category_names;
        const auto it = std::find(names.begin(), names.end(), o.category);
        if (it == names.end()) throw ValidationError("unknown category '" + o.category + "'");
        category = static_cast<std::uint32_t>(it - names.begin());
    }

    if (o.what == "dims") {
        auto f = open_out(o.out);
        f << "dimension,rank,item_id,score\n";
        for (std::size_t k = 0; k < ck.model.visual_dims(); ++k) {
            const auto top = top_items_per_dimension(ck.model, k, o.top, category);
            for (std::size_t r = 0; r < top.size(); ++r)
                f << k << ',' << r + 1 << ',' << ck.items.name(top[r].item) << ',' << detail::format_number(top[r].score) << '\n';
        }
        return kOk;
    }
    if (o.what == "heatmap") {
        std::vector<ItemId> items;
        for (std::size_t i = 0; i < ck.model.shape.num_items; ++i)
            if (!category || ck.taxonomy->category_of[i] == *category) items.push_back(static_cast<ItemId>(i));
        auto f = open_out(o.out);
        f << "item_id,epoch,normalized_score\n";
        std::vector<std::vector<double>> per_epoch;
        for (std::size_t e = 0; e < ck.model.num_epochs(); ++e) per_epoch.push_back(normalized_visual_scores(ck.model, items, e));
        for (std::size_t n = 0; n < items.size(); ++n)
            for (std::size_t e = 0; e < per_epoch.size(); ++e)
                f << ck.items.name(items[n]) << ',' << e << ',' << detail::format_number(per_epoch[e][n]) << '\n';
        return kOk;
    }
    throw ValidationError("unknown export '" + o.what + "' (expected dims, heatmap, styles, segments, weights)");
}

// Registers one string option per config key; only flags actually given are applied.
void add_key_flags(CLI::App* app, const std::vector<std::pair<std::string, std::string>>& defaults,
                   std::map<std::string, std::string>& given, std::map<std::string, CLI::Option*>& options) {
    for (const auto& [key, value] : defaults) {
        auto* opt = app->add_option("--" + key, given[key], "default " + value);
        options[key] = opt;
    }
}

std::map<std::string, std::string> given_flags(const std::map<std::string, std::string>& values,
                                               const std::map<std::string, CLI::Option*>& options) {
    std::map<std::string, std::string> out;
    for (const auto& [key, opt] : options)
        if (opt->count() > 0) out[key] = values.at(key);
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Temporal visually-aware one-class recommender"};
    app.require_subcommand(1);

    std::string out_dir, config_path, checkpoint, mode = "both";
    bool per_user = false;
    unsigned threads = 1;

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset with planted epochs");
    synth->add_option("--out", out_dir, "output directory")->required();
    synth->add_option("--config", config_path, "key = value synth config")->check(CLI::ExistingFile);
    std::map<std::string, std::string> synth_values;
    std::map<std::string, CLI::Option*> synth_opts;
    add_key_flags(synth, to_key_values(SynthConfig{}), synth_values, synth_opts);

    DataPaths validate_paths;
    auto* validate = app.add_subcommand("validate", "check input files and print a summary");
    validate_paths.add_to(validate, false);

    DataPaths train_paths;
    auto* train = app.add_subcommand("train", "fit a model and write checkpoint, segments, manifest and log");
    train_paths.add_to(train, false);
    train->add_option("--out", out_dir, "output directory")->required();
    train->add_option("--config", config_path, "key = value training config")->check(CLI::ExistingFile);
    std::map<std::string, std::string> train_values;
    std::map<std::string, CLI::Option*> train_opts;
    auto train_keys = to_key_values(TrainConfig{});
    std::erase_if(train_keys, [](const auto& kv) { return kv.first == "feature-dim"; });
    add_key_flags(train, train_keys, train_values, train_opts);

    DataPaths eval_paths;
    auto* eval = app.add_subcommand("eval", "AUC on the held-out test items");
    eval_paths.add_to(eval, false);
    eval->add_option("--checkpoint", checkpoint, "checkpoint.bin from train")->required()->check(CLI::ExistingFile);
    eval->add_option("--out", out_dir, "report directory")->required();
    eval->add_option("--mode", mode, "all, cold or both")->check(CLI::IsMember({"all", "cold", "both"}))->capture_default_str();
    eval->add_flag("--per-user", per_user, "also write per_user.csv");
    eval->add_option("--threads", threads, "worker threads")->capture_default_str();

    ExportOptions ex;
    auto* exp = app.add_subcommand("export", "CSV exports for plotting");
    exp->add_option("what", ex.what, "dims, heatmap, styles, segments or weights")
        ->required()
        ->check(CLI::IsMember({"dims", "heatmap", "styles", "segments", "weights"}));
    exp->add_option("--checkpoint", ex.checkpoint, "checkpoint.bin from train")->required()->check(CLI::ExistingFile);
    exp->add_option("--features", ex.features, "feature file (dims, heatmap)")->check(CLI::ExistingFile);
    exp->add_option("--out", ex.out, "output file")->required();
    exp->add_option("--top", ex.top, "items per dimension")->capture_default_str();
    exp->add_option("--category", ex.category, "restrict to one category");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kInvalid;
    }

    try {
        if (*synth) return cmd_synth(out_dir, config_path, given_flags(synth_values, synth_opts));
        if (*validate) return cmd_validate(validate_paths);
        if (*train) return cmd_train(train_paths, out_dir, config_path, given_flags(train_values, train_opts));
        if (*eval) return cmd_eval(eval_paths, checkpoint, out_dir, mode, per_user, threads);
        if (*exp) return cmd_export(ex);
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInvalid;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInvalid;
    } catch (const UnsupportedOperation& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInvalid;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInvalid;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntime;
    }
    return kRuntime;
}
