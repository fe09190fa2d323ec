// Command-line front end: synthesize data, train and fine-tune models,
// evaluate them, and export the SE rank heatmap data. One subcommand per
// pipeline stage; every output directory receives the fully resolved run
// configuration so any run can be reproduced from its artifacts.
//
// Exit codes: 0 success, 1 verification failure, 2 usage or config error,
// 3 I/O or data-format error.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "semd/checkpoint.hpp"
#include "semd/config.hpp"
#include "semd/data.hpp"
#include "semd/gradcheck.hpp"
#include "semd/model.hpp"
#include "semd/preprocess.hpp"
#include "semd/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace semd;

namespace {

/// A model failed a check it was supposed to pass (exit code 1).
struct VerificationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + dir + ": " + ec.message());
}

void write_json_file(const json& j, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << j.dump(2) << '\n';
    if (!os) throw std::runtime_error("failed writing " + path);
}

RunConfig make_run_config(const std::string& config_path, std::optional<std::uint64_t> seed,
                          const std::string& out_dir) {
    RunConfig rc = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (seed) set_master_seed(rc, *seed);
    rc.out_dir = out_dir;
    return rc;
}

// --- manifest ---------------------------------------------------------------
// cmd_synth writes one EEGT file pair per subject plus a manifest that maps
// subject ids to their files; downstream commands take either the manifest
// (or its directory) or a bare .eegt file as --data.

struct ManifestEntry {
    int id = 0;
    std::string calibration;
    std::string online;
};

struct Manifest {
    std::string dir;  // everything in the manifest is relative to this
    std::vector<ManifestEntry> subjects;
};

bool is_manifest_path(const std::string& path) {
    return !(path.size() > 5 && path.compare(path.size() - 5, 5, ".eegt") == 0);
}

Manifest load_manifest(const std::string& path) {
    fs::path p(path);
    if (fs::is_directory(p)) p /= "manifest.json";
    std::ifstream is(p);
    if (!is) throw std::runtime_error("cannot open manifest: " + p.string());
    Manifest m;
    m.dir = p.parent_path().string();
    if (m.dir.empty()) m.dir = ".";
    try {
        const json j = json::parse(std::string(std::istreambuf_iterator<char>(is), {}));
        for (const json& s : j.at("subjects")) {
            ManifestEntry e;
            e.id = s.at("id").get<int>();
            e.calibration = s.at("calibration").get<std::string>();
            e.online = s.at("online").get<std::string>();
            m.subjects.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        throw std::runtime_error("malformed manifest " + p.string() + ": " + e.what());
    }
    if (m.subjects.empty()) throw std::runtime_error("manifest lists no subjects: " + p.string());
    return m;
}

std::string manifest_file(const Manifest& m, const std::string& rel) {
    return (fs::path(m.dir) / rel).string();
}

const ManifestEntry& manifest_subject(const Manifest& m, int id) {
    for (const ManifestEntry& e : m.subjects)
        if (e.id == id) return e;
    throw std::runtime_error("subject " + std::to_string(id) + " not in manifest");
}

std::string subject_tag(int id) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "s%02d", id);
    return buf;
}

// --- model/data compatibility ----------------------------------------------

void check_compatible(const ModelState<float>& m, const Dataset& ds, const std::string& what) {
    if (static_cast<int>(ds.montage.size()) != m.cfg.n_channels)
        throw std::runtime_error("montage mismatch: the model expects " +
                                 std::to_string(m.cfg.n_channels) + " channels but " + what +
                                 " has " + std::to_string(ds.montage.size()));
    if (ds.n_samples() != m.cfg.n_samples)
        throw std::runtime_error("shape mismatch: the model expects " +
                                 std::to_string(m.cfg.n_samples) + " samples per trial but " +
                                 what + " has " + std::to_string(ds.n_samples()) +
                                 " after preprocessing");
}

Dataset load_preprocessed(const std::string& path, const PreprocessConfig& pre) {
    return preprocess_dataset(read_dataset(path), pre);
}

std::uint64_t fnv1a(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 1469598103934665603ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

std::map<std::string, std::uint64_t> tensor_hashes(const ModelState<float>& m) {
    std::map<std::string, std::uint64_t> out;
    const auto take = [&](const char* name, const Tensor<float>& t) {
        out[name] = fnv1a(t.data(), t.numel() * sizeof(float));
    };
    for_each_param(m, take);
    for_each_buffer(m, take);
    return out;
}

// --- subcommands -------------------------------------------------------------

int run_synth(const std::string& config_path, const std::string& out,
              std::optional<std::uint64_t> seed) {
    RunConfig rc = make_run_config(config_path, seed, out);
    validate_synth(rc.synth);
    ensure_dir(out);
    save_run_config(rc, out);

    json subjects = json::array();
    long n_trials = 0;
    for (int s = 1; s <= rc.synth.n_subjects; ++s) {  // one at a time keeps memory flat
        const SubjectRecording rec = synth_subject(rc.synth, s);
        const std::string cal = subject_tag(s) + "_calibration.eegt";
        const std::string onl = subject_tag(s) + "_online.eegt";
        write_dataset(rec.calibration, (fs::path(out) / cal).string());
        write_dataset(rec.online, (fs::path(out) / onl).string());
        subjects.push_back({{"id", s}, {"calibration", cal}, {"online", onl}});
        n_trials += rec.calibration.n_trials() + rec.online.n_trials();
    }
    write_json_file(json{{"format", "semd-manifest"},
                         {"version", 1},
                         {"fs", rc.synth.fs},
                         {"montage", rc.synth.montage},
                         {"subjects", subjects}},
                    (fs::path(out) / "manifest.json").string());
    std::cout << "synth: wrote " << rc.synth.n_subjects << " subjects, " << n_trials
              << " trials to " << out << "\n";
    return 0;
}

int run_train_base(const std::string& data, const std::string& config_path,
                   const std::string& out, std::optional<std::uint64_t> seed) {
    RunConfig rc = make_run_config(config_path, seed, out);
    validate_train(rc.train);
    ensure_dir(out);
    save_run_config(rc, out);

    const Manifest manifest = load_manifest(data);
    std::vector<int> ids;
    for (const ManifestEntry& e : manifest.subjects) ids.push_back(e.id);
    const ProtocolSplit split = protocol_split(ids);

    std::map<int, SubjectRecording> pool;
    for (int id : split.pool)
        pool[id].calibration =
            load_preprocessed(manifest_file(manifest, manifest_subject(manifest, id).calibration),
                              rc.preprocess);
    const Dataset pooled = pool_calibration(pool, split.pool);
    std::cout << "train-base: pool of " << split.pool.size() << " subjects, "
              << pooled.n_trials() << " trials, roster of " << split.roster.size() << "\n";

    Rng init_rng(mix_seed(rc.train.seed, 0));
    const FitResult<float> fit = train_base(rc.arch, rc.train, pooled, init_rng);

    save_checkpoint(fit.model, (fs::path(out) / "base_model.semd").string());
    write_loss_csv(fit.report, (fs::path(out) / "loss.csv").string());
    // wall time goes to stdout, not the report: rerunning with the same seed
    // must reproduce every artifact byte for byte
    write_json_file(json{{"stop_epoch", fit.report.stop_epoch},
                         {"stop_reason", fit.report.stop_reason},
                         {"train_accuracy", fit.report.train_accuracy},
                         {"n_trials", pooled.n_trials()},
                         {"pool", split.pool},
                         {"roster", split.roster}},
                    (fs::path(out) / "report.json").string());
    std::cout << "train-base: stopped at epoch " << fit.report.stop_epoch << " ("
              << fit.report.stop_reason << "), train accuracy " << fit.report.train_accuracy
              << ", " << fit.report.wall_s << " s, saved "
              << (fs::path(out) / "base_model.semd").string() << "\n";
    return 0;
}

int run_finetune(const std::string& base_path, const std::string& data, int subject,
                 const std::string& variant, const std::string& config_path,
                 const std::string& out, std::optional<std::uint64_t> seed) {
    const FinetuneVariant v = parse_variant(variant);
    RunConfig rc = make_run_config(config_path, seed, out);
    validate_train(rc.train);

    const ModelState<float> base = load_checkpoint(base_path);
    std::string cal_path = data;
    if (is_manifest_path(data)) {
        if (subject <= 0)
            throw std::invalid_argument("--subject is required when --data is a manifest");
        const Manifest manifest = load_manifest(data);
        cal_path = manifest_file(manifest, manifest_subject(manifest, subject).calibration);
    }
    Dataset calibration = load_preprocessed(cal_path, rc.preprocess);
    check_compatible(base, calibration, "the calibration data");
    if (subject <= 0) subject = calibration.subject;

    ensure_dir(out);
    save_run_config(rc, out);

    const auto before = tensor_hashes(base);
    const FitResult<float> fit = finetune(base, calibration, v, rc.train);
    const auto after = tensor_hashes(fit.model);

    // everything outside the variant's trainable set must be byte-identical
    const std::vector<std::string> trainable = trainable_partition(base, v);
    std::vector<std::string> touched;
    for (const auto& [name, h] : after) {
        const bool frozen =
            std::find(trainable.begin(), trainable.end(), name) == trainable.end() &&
            v != FinetuneVariant::kContinueAll;
        if (frozen && h != before.at(name)) touched.push_back(name);
    }
    if (!touched.empty())
        throw VerificationError("finetune: frozen tensor " + touched.front() + " changed");

    save_checkpoint(fit.model, (fs::path(out) / "tuned_model.semd").string());
    write_loss_csv(fit.report, (fs::path(out) / "loss.csv").string());
    write_json_file(json{{"variant", variant_name(v)},
                         {"subject", subject},
                         {"stop_epoch", fit.report.stop_epoch},
                         {"stop_reason", fit.report.stop_reason},
                         {"train_accuracy", fit.report.train_accuracy},
                         {"trainable", trainable},
                         {"frozen_intact", true}},
                    (fs::path(out) / "report.json").string());
    std::cout << "finetune: subject " << subject << ", variant " << variant_name(v)
              << ", stopped at epoch " << fit.report.stop_epoch << ", train accuracy "
              << fit.report.train_accuracy << ", " << fit.report.wall_s << " s\n";
    return 0;
}

struct EvalRow {
    std::string subject;
    double n_trials, acc, tp, fp, fn, tn;
};

void write_eval_csv(const std::vector<EvalRow>& rows, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << "subject,n_trials,acc,tp,fp,fn,tn\n" << std::setprecision(17);
    for (const EvalRow& r : rows)
        os << r.subject << ',' << r.n_trials << ',' << r.acc << ',' << r.tp << ',' << r.fp << ','
           << r.fn << ',' << r.tn << '\n';
    if (!os) throw std::runtime_error("failed writing " + path);
}

EvalRow eval_row(const std::string& subject, const EvalResult& r) {
    // positive class = right-hand imagery (label 1)
    return {subject,
            static_cast<double>(r.n_trials),
            r.accuracy,
            static_cast<double>(r.confusion[1][1]),
            static_cast<double>(r.confusion[0][1]),
            static_cast<double>(r.confusion[1][0]),
            static_cast<double>(r.confusion[0][0])};
}

int run_eval(const std::string& model_path, const std::string& data, const std::string& out,
             const std::string& config_path, std::optional<std::uint64_t> seed) {
    RunConfig rc = make_run_config(config_path, seed, out);
    const ModelState<float> model = load_checkpoint(model_path);
    ensure_dir(out);
    save_run_config(rc, out);

    std::vector<EvalRow> rows;
    if (is_manifest_path(data)) {
        const Manifest manifest = load_manifest(data);
        for (const ManifestEntry& e : manifest.subjects) {
            const Dataset online =
                load_preprocessed(manifest_file(manifest, e.online), rc.preprocess);
            check_compatible(model, online, "subject " + std::to_string(e.id));
            rows.push_back(eval_row(std::to_string(e.id), evaluate(model, online)));
        }
    } else {
        const Dataset ds = load_preprocessed(data, rc.preprocess);
        check_compatible(model, ds, data);
        rows.push_back(eval_row(std::to_string(ds.subject), evaluate(model, ds)));
    }

    // unweighted mean and population std over the subject rows
    const std::size_t n = rows.size();
    EvalRow mean{"mean", 0, 0, 0, 0, 0, 0}, sd{"std", 0, 0, 0, 0, 0, 0};
    auto fields = [](EvalRow& r) {
        return std::array<double*, 6>{&r.n_trials, &r.acc, &r.tp, &r.fp, &r.fn, &r.tn};
    };
    for (EvalRow r : rows) {
        auto dst = fields(mean);
        const auto src = fields(r);
        for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] += *src[i];
    }
    for (double* p : fields(mean)) *p /= static_cast<double>(n);
    for (EvalRow r : rows) {
        auto dst = fields(sd);
        const auto src = fields(r);
        const auto mu = fields(mean);
        for (std::size_t i = 0; i < dst.size(); ++i)
            *dst[i] += (*src[i] - *mu[i]) * (*src[i] - *mu[i]) / static_cast<double>(n);
    }
    for (double* p : fields(sd)) *p = std::sqrt(*p);
    rows.push_back(mean);
    rows.push_back(sd);

    write_eval_csv(rows, (fs::path(out) / "eval.csv").string());
    write_json_file(json{{"n_subjects", n}, {"acc_mean", mean.acc}, {"acc_std", sd.acc}},
                    (fs::path(out) / "summary.json").string());
    std::cout << "eval: " << n << " subject(s), accuracy " << mean.acc * 100.0 << "% +/- "
              << sd.acc * 100.0 << "%\n";
    return 0;
}

int run_ranks(const std::string& model_path, const std::string& data, int subject,
              const std::string& out, const std::string& config_path,
              std::optional<std::uint64_t> seed) {
    RunConfig rc = make_run_config(config_path, seed, out);
    const ModelState<float> model = load_checkpoint(model_path);

    std::string path = data;
    if (is_manifest_path(data)) {
        if (subject <= 0)
            throw std::invalid_argument("--subject is required when --data is a manifest");
        const Manifest manifest = load_manifest(data);
        path = manifest_file(manifest, manifest_subject(manifest, subject).online);
    }
    const Dataset ds = load_preprocessed(path, rc.preprocess);
    check_compatible(model, ds, data);

    ensure_dir(out);
    save_run_config(rc, out);

    const ElectrodeRanks<float> er = extract_electrode_ranks(model, ds);
    const int n = er.per_trial.dim(0), c = er.per_trial.dim(1);
    {
        std::ofstream os((fs::path(out) / "electrode_ranks.csv").string());
        if (!os) throw std::runtime_error("cannot open electrode_ranks.csv for writing");
        os << "trial";
        for (const std::string& name : ds.montage) os << ',' << name;
        os << '\n' << std::setprecision(17);
        for (int i = 0; i < n; ++i) {
            os << i;
            for (int j = 0; j < c; ++j) os << ',' << er.per_trial.at({i, j});
            os << '\n';
        }
        os << "mean";  // recomputed in double so the row matches the column means exactly
        for (int j = 0; j < c; ++j) {
            double s = 0;
            for (int i = 0; i < n; ++i) s += er.per_trial.at({i, j});
            os << ',' << s / n;
        }
        os << '\n';
        if (!os) throw std::runtime_error("failed writing electrode_ranks.csv");
    }

    const FilterRanks<float> fr = extract_filter_ranks(model, ds);
    {
        std::ofstream os((fs::path(out) / "filter_ranks.csv").string());
        if (!os) throw std::runtime_error("cannot open filter_ranks.csv for writing");
        os << "stage,filter,rank\n" << std::setprecision(17);
        const std::array<const std::vector<float>*, 3> stages{&fr.stage1, &fr.stage2, &fr.stage3};
        for (std::size_t s = 0; s < stages.size(); ++s)
            for (std::size_t f = 0; f < stages[s]->size(); ++f)
                os << s + 1 << ',' << f << ',' << (*stages[s])[f] << '\n';
        if (!os) throw std::runtime_error("failed writing filter_ranks.csv");
    }
    std::cout << "ranks: " << n << " trials, " << c << " electrodes, filter stages "
              << fr.stage1.size() << "/" << fr.stage2.size() << "/" << fr.stage3.size() << " -> "
              << out << "\n";
    return 0;
}

int run_gradcheck(std::uint64_t seed, int instances, const std::string& perturb) {
    GradCheckOptions opt;
    opt.seed = seed;
    opt.instances = instances;
    opt.perturb_op = perturb;
    const auto results = run_gradcheck(opt);
    std::string failing;
    for (const GradCheckResult& r : results) {
        std::printf("%-26s max_rel_err %.3e  %s\n", r.op.c_str(), r.max_rel_err,
                    r.pass ? "pass" : "FAIL");
        if (!r.pass && failing.empty()) failing = r.op;
    }
    if (!failing.empty()) {
        std::cerr << "gradcheck: FAILED on op " << failing << "\n";
        return 1;
    }
    std::cout << "gradcheck: all " << results.size() << " ops passed\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SE-ranked motor-imagery EEG decoder"};
    app.require_subcommand(1);

    std::string config_path, data, out, model_path, base_path, variant, perturb;
    std::optional<std::uint64_t> seed;
    int subject = 0;
    std::uint64_t gc_seed = 1;
    int gc_instances = 20;
    int code = 0;

    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic EEG study");
    synth->add_option("--config", config_path, "JSON run config");
    synth->add_option("--out", out, "output directory")->required();
    synth->add_option("--seed", seed, "master seed (overrides the config seeds)");
    synth->callback([&] { code = run_synth(config_path, out, seed); });

    CLI::App* train = app.add_subcommand("train-base", "Train the subject-independent base model");
    train->add_option("--data", data, "manifest.json or its directory")->required();
    train->add_option("--config", config_path, "JSON run config");
    train->add_option("--out", out, "output directory")->required();
    train->add_option("--seed", seed, "master seed (overrides the config seeds)");
    train->callback([&] { code = run_train_base(data, config_path, out, seed); });

    CLI::App* ft = app.add_subcommand("finetune", "Fine-tune a base model on one subject");
    ft->add_option("--base", base_path, "base model checkpoint")->required();
    ft->add_option("--data", data, "manifest (with --subject) or a calibration .eegt file")
        ->required();
    ft->add_option("--subject", subject, "subject id within the manifest");
    ft->add_option("--variant", variant,
                   "continue-all | dense | elec-dense | elec-map-dense")
        ->required();
    ft->add_option("--config", config_path, "JSON run config");
    ft->add_option("--out", out, "output directory")->required();
    ft->add_option("--seed", seed, "master seed (overrides the config seeds)");
    ft->callback(
        [&] { code = run_finetune(base_path, data, subject, variant, config_path, out, seed); });

    CLI::App* ev = app.add_subcommand("eval", "Evaluate a model on online sessions");
    ev->add_option("--model", model_path, "model checkpoint")->required();
    ev->add_option("--data", data, "manifest or a single .eegt file")->required();
    ev->add_option("--config", config_path, "JSON run config");
    ev->add_option("--out", out, "output directory")->required();
    ev->add_option("--seed", seed, "master seed");
    ev->callback([&] { code = run_eval(model_path, data, out, config_path, seed); });

    CLI::App* rk = app.add_subcommand("ranks", "Export electrode and filter rank heatmap data");
    rk->add_option("--model", model_path, "model checkpoint")->required();
    rk->add_option("--data", data, "manifest (with --subject) or a single .eegt file")->required();
    rk->add_option("--subject", subject, "subject id within the manifest");
    rk->add_option("--config", config_path, "JSON run config");
    rk->add_option("--out", out, "output directory")->required();
    rk->add_option("--seed", seed, "master seed");
    rk->callback(
        [&] { code = run_ranks(model_path, data, subject, out, config_path, seed); });

    CLI::App* gc = app.add_subcommand("gradcheck", "Verify every analytic gradient");
    gc->add_option("--seed", gc_seed, "suite seed");
    gc->add_option("--instances", gc_instances, "random instances per op");
    gc->add_option("--perturb", perturb, "test hook: corrupt this op's analytic gradient");
    gc->callback([&] { code = run_gradcheck(gc_seed, gc_instances, perturb); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const VerificationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return code;
}
