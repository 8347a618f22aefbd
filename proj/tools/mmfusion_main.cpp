// Command-line surface for the text-guided fusion pipeline: dataset
// synthesis, training, evaluation, aggregator comparison, verification.
// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mmfusion/checkpoint.hpp"
#include "mmfusion/compare.hpp"
#include "mmfusion/config.hpp"
#include "mmfusion/data_synth.hpp"
#include "mmfusion/train.hpp"
#include "mmfusion/verify.hpp"

namespace {

using namespace mmf;

struct CommonFlags {
    std::string config_path;
    std::string out;
    std::string data;
    std::string task;
    std::string aggregator;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

RunConfig load_base_config(const CommonFlags& flags) {
    RunConfig cfg = flags.config_path.empty() ? RunConfig{} : load_config_file(flags.config_path);
    if (flags.seed_set) cfg.seed = flags.seed;
    if (!flags.task.empty()) cfg.task = parse_task(flags.task);
    if (!flags.aggregator.empty()) cfg.aggregator = parse_aggregator(flags.aggregator);
    if (!flags.data.empty()) cfg.data_dir = flags.data;
    if (!flags.out.empty()) cfg.out_dir = flags.out;
    cfg.validate();
    return cfg;
}

int cmd_synth_data(const CommonFlags& flags) {
    RunConfig cfg = load_base_config(flags);
    const std::string target = flags.out.empty() ? cfg.data_dir : flags.out;
    generate_dataset(cfg.synth, cfg.task, cfg.seed, target);

    std::ifstream oracle_in(std::filesystem::path(target) / "oracle.json");
    nlohmann::json oracle;
    oracle_in >> oracle;
    std::printf("dataset_dir=%s\n", target.c_str());
    std::printf("task=%s n_samples=%zu image_size=%zu seed=%llu\n", to_string(cfg.task),
                cfg.synth.n_samples, cfg.synth.image_size, (unsigned long long)cfg.seed);
    std::printf("oracle_auc_image_only=%.4f oracle_auc_joint=%.4f gap=%.4f\n",
                oracle["auc_image_only"].get<double>(), oracle["auc_joint"].get<double>(),
                oracle["gap"].get<double>());
    return 0;
}

int cmd_train(const CommonFlags& flags) {
    RunConfig cfg = load_base_config(flags);
    TrainResult result = train(cfg);
    std::printf("aggregator=%s task=%s seed=%llu\n", to_string(cfg.aggregator), to_string(cfg.task),
                (unsigned long long)cfg.seed);
    std::printf("epochs_run=%zu steps_run=%zu\n", result.epochs_run, result.steps_run);
    std::printf("final_train_loss=%.6f\n", result.final_train_loss);
    std::printf("best_val_auc=%.6f\n", result.best_val_auc);
    std::printf("checkpoint=%s\n", result.checkpoint_path.c_str());
    return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data, const std::string& split,
             const std::string& out) {
    CheckpointData ckpt = load_checkpoint(checkpoint_path);
    RunConfig cfg = ckpt.config();
    Model<float> model(cfg);
    restore_params(model, ckpt);

    const std::string data_dir = data.empty() ? cfg.data_dir : data;
    const Dataset dataset = load_dataset(data_dir);
    const std::vector<std::size_t>& indices =
        split == "train" ? dataset.train_indices : dataset.test_indices;
    const double auc_value = evaluate_auc(model, dataset, cfg.task, indices);

    nlohmann::ordered_json j;
    j["task"] = to_string(cfg.task);
    j["split"] = split;
    j["auc"] = auc_value;
    j["n"] = indices.size();
    j["seed"] = cfg.seed;
    char hash_buf[20];
    std::snprintf(hash_buf, sizeof(hash_buf), "%016llx", (unsigned long long)ckpt.config_hash);
    j["config_hash"] = hash_buf;
    const std::string text = j.dump();
    std::printf("%s\n", text.c_str());
    if (!out.empty()) {
        std::ofstream f(out);
        if (!f) throw IoError("eval: cannot write '" + out + "'");
        f << text << "\n";
    }
    return 0;
}

int cmd_compare(const CommonFlags& flags, const std::vector<std::string>& aggregators, bool ablate) {
    RunConfig cfg = load_base_config(flags);
    if (!aggregators.empty()) cfg.compare_aggregators = aggregators;
    if (!flags.task.empty()) {
        // Restrict to the requested task by dropping the other dataset.
        if (cfg.task == Task::malignancy) cfg.compare_data_calcification.clear();
        else cfg.compare_data_malignancy.clear();
    }
    CompareResult result = compare_run(cfg, ablate);
    std::printf("%s", compare_csv_text(result).c_str());
    std::printf("csv=%s\n", result.csv_path.c_str());
    return 0;
}

int cmd_verify(const std::string& fault) {
    if (fault == "softmax-no-max-sub") {
        fault::softmax_skip_max_subtraction() = true;
    } else if (!fault.empty()) {
        throw ConfigError("verify: unknown fault '" + fault + "'");
    }
    const std::vector<CheckResult> results = run_all_verifications();
    bool all_pass = true;
    for (const auto& r : results) {
        std::printf("%-4s %-40s measured=%.3e tolerance=%.0e\n", r.pass ? "PASS" : "FAIL",
                    r.name.c_str(), r.measured, r.tolerance);
        all_pass = all_pass && r.pass;
    }
    std::printf("%s: %zu checks\n", all_pass ? "OK" : "FAILED", results.size());
    return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Text-guided multi-modal classification workbench"};
    app.require_subcommand(1);

    CommonFlags flags;
    const auto aggregator_names =
        std::vector<std::string>{"co", "merged", "cross", "naive_mlp", "vision_self", "vision_none"};

    auto add_common = [&](CLI::App* cmd, bool with_model_flags) {
        cmd->add_option("--config", flags.config_path, "Config file (flat key = value format)")
            ->check(CLI::ExistingFile);
        cmd->add_option("--out", flags.out, "Output directory / file override");
        auto* seed_opt = cmd->add_option("--seed", flags.seed, "Seed override");
        cmd->parse_complete_callback([&flags, seed_opt]() { flags.seed_set = seed_opt->count() > 0; });
        cmd->add_option("--task", flags.task, "Task override")
            ->check(CLI::IsMember({"malignancy", "calcification"}));
        if (with_model_flags) {
            cmd->add_option("--data", flags.data, "Dataset directory override");
            cmd->add_option("--aggregator", flags.aggregator, "Aggregator override")
                ->check(CLI::IsMember(aggregator_names));
        }
    };

    CLI::App* synth = app.add_subcommand("synth-data", "Generate a synthetic multi-modal dataset");
    add_common(synth, false);

    CLI::App* train_cmd = app.add_subcommand("train", "Train one model configuration");
    add_common(train_cmd, true);

    CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
    std::string eval_checkpoint, eval_split = "test", eval_out, eval_data;
    eval_cmd->add_option("--checkpoint", eval_checkpoint, "Checkpoint file")->required();
    eval_cmd->add_option("--data", eval_data, "Dataset directory override");
    eval_cmd->add_option("--split", eval_split, "Split to evaluate")
        ->check(CLI::IsMember({"train", "test"}));
    eval_cmd->add_option("--out", eval_out, "Write the JSON report here as well");

    CLI::App* compare_cmd =
        app.add_subcommand("compare", "Train all aggregators per task and tabulate AUCs");
    add_common(compare_cmd, false);
    std::vector<std::string> compare_aggs;
    bool ablate = false;
    compare_cmd->add_option("--aggregator", compare_aggs, "Aggregators to compare (repeatable)")
        ->check(CLI::IsMember(aggregator_names));
    compare_cmd->add_flag("--ablate", ablate, "Also sweep token counts and pooling modes");

    CLI::App* verify_cmd = app.add_subcommand("verify", "Run the numerical verification suite");
    std::string fault;
    verify_cmd->add_option("--fault", fault, "Inject a known fault (for testing the checks)")
        ->check(CLI::IsMember({"softmax-no-max-sub"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, returns 0
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help() << std::endl;
        return 2;
    }

    try {
        if (synth->parsed()) return cmd_synth_data(flags);
        if (train_cmd->parsed()) return cmd_train(flags);
        if (eval_cmd->parsed()) return cmd_eval(eval_checkpoint, eval_data, eval_split, eval_out);
        if (compare_cmd->parsed()) return cmd_compare(flags, compare_aggs, ablate);
        if (verify_cmd->parsed()) return cmd_verify(fault);
    } catch (const mmf::ConfigError& e) {
        std::cerr << "config error: " << e.what() << std::endl;
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
    return 2;
}
