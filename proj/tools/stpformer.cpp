#include <cstddef>
#include <string>

#include "CLI11.hpp"
#include "stpformer/commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"spatio-temporal traffic forecaster"};
    app.require_subcommand(1);

    std::string config_path, out_dir, ckpt_path, data_dir;
    std::size_t window = 0, node = 0;

    CLI::App* train = app.add_subcommand("train", "fit a model and write a checkpoint");
    train->add_option("--config", config_path, "run config JSON")->required();
    train->add_option("--out", out_dir, "output directory")->required();

    CLI::App* eval = app.add_subcommand("eval", "score a checkpoint on a dataset's test split");
    eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    eval->add_option("--data", data_dir, "dataset directory")->required();

    CLI::App* inspect = app.add_subcommand("inspect", "dump forecast diagnostics for one window");
    inspect->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    inspect->add_option("--data", data_dir, "dataset directory")->required();
    inspect->add_option("--window", window, "test-split window index")->required();
    inspect->add_option("--node", node, "node index")->required();
    inspect->add_option("--out", out_dir, "output directory")->required();

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--config", config_path, "run config JSON with a data.synth section")
        ->required();
    synth->add_option("--out", out_dir, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    if (train->parsed()) return stpformer::cmd_train(config_path, out_dir);
    if (eval->parsed()) return stpformer::cmd_eval(ckpt_path, data_dir);
    if (inspect->parsed()) return stpformer::cmd_inspect(ckpt_path, data_dir, window, node, out_dir);
    return stpformer::cmd_synth(config_path, out_dir);
}
