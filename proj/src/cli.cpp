#include "gridpipe/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "gridpipe/csv.hpp"

namespace gridpipe {

namespace fs = std::filesystem;

namespace {

void read_env(const nlohmann::json& j, EnvironmentConfig& c) {
    c.rows = j.value("rows", c.rows);
    c.max_inputs = j.value("max_inputs", c.max_inputs);
    c.cluster_size = j.value("cluster_size", c.cluster_size);
    c.k_folds = j.value("k_folds", c.k_folds);
    c.penalty = j.value("penalty", c.penalty);
    c.gamma = j.value("gamma", c.gamma);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.candidate_meta_cap = j.value("candidate_meta_cap", c.candidate_meta_cap);
    c.flat_mode = j.value("flat_mode", c.flat_mode);
}

nlohmann::json env_json(const EnvironmentConfig& c) {
    return {{"rows", c.rows},
            {"max_inputs", c.max_inputs},
            {"cluster_size", c.cluster_size},
            {"k_folds", c.k_folds},
            {"penalty", c.penalty},
            {"gamma", c.gamma},
            {"embed_dim", c.embed_dim},
            {"candidate_meta_cap", c.candidate_meta_cap},
            {"flat_mode", c.flat_mode}};
}

void read_agent(const nlohmann::json& j, AgentConfig& c) {
    c.gamma = j.value("gamma", c.gamma);
    c.epsilon_start = j.value("epsilon_start", c.epsilon_start);
    c.epsilon_end = j.value("epsilon_end", c.epsilon_end);
    c.epsilon_decay_episodes = j.value("epsilon_decay_episodes", c.epsilon_decay_episodes);
    c.replay_capacity = j.value("replay_capacity", c.replay_capacity);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.per_alpha = j.value("per_alpha", c.per_alpha);
    c.per_beta_start = j.value("per_beta_start", c.per_beta_start);
    c.per_beta_end = j.value("per_beta_end", c.per_beta_end);
    c.per_beta_anneal_episodes = j.value("per_beta_anneal_episodes", c.per_beta_anneal_episodes);
    c.target_sync_steps = j.value("target_sync_steps", c.target_sync_steps);
    c.train_every_steps = j.value("train_every_steps", c.train_every_steps);
    c.eval_epsilon = j.value("eval_epsilon", c.eval_epsilon);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.explore_intermediate_levels =
        j.value("explore_intermediate_levels", c.explore_intermediate_levels);
}

nlohmann::json agent_json(const AgentConfig& c) {
    return {{"gamma", c.gamma},
            {"epsilon_start", c.epsilon_start},
            {"epsilon_end", c.epsilon_end},
            {"epsilon_decay_episodes", c.epsilon_decay_episodes},
            {"replay_capacity", c.replay_capacity},
            {"batch_size", c.batch_size},
            {"per_alpha", c.per_alpha},
            {"per_beta_start", c.per_beta_start},
            {"per_beta_end", c.per_beta_end},
            {"per_beta_anneal_episodes", c.per_beta_anneal_episodes},
            {"target_sync_steps", c.target_sync_steps},
            {"train_every_steps", c.train_every_steps},
            {"eval_epsilon", c.eval_epsilon},
            {"learning_rate", c.learning_rate},
            {"explore_intermediate_levels", c.explore_intermediate_levels}};
}

void read_search(const nlohmann::json& j, SearchConfig& c) {
    c.k = j.value("k", c.k);
    c.episodes = j.value("episodes", c.episodes);
    c.beta = j.value("beta", c.beta);
    c.eval_epsilon = j.value("eval_epsilon", c.eval_epsilon);
}

nlohmann::json search_json(const SearchConfig& c) {
    return {{"k", c.k},
            {"episodes", c.episodes},
            {"beta", c.beta},
            {"eval_epsilon", c.eval_epsilon}};
}

}  // namespace

ToolConfig tool_config_from_json(const std::string& text) {
    ToolConfig cfg;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw UsageError(std::string("config: ") + e.what());
    }
    if (j.contains("environment")) read_env(j["environment"], cfg.environment);
    if (j.contains("agent")) read_agent(j["agent"], cfg.agent);
    if (j.contains("search")) read_search(j["search"], cfg.search);
    if (j.contains("targets")) {
        for (const auto& [file, target] : j["targets"].items()) {
            cfg.targets[file] = target.get<std::string>();
        }
    }
    return cfg;
}

std::string tool_config_to_json(const ToolConfig& cfg) {
    nlohmann::json targets = nlohmann::json::object();
    for (const auto& [file, target] : cfg.targets) targets[file] = target;
    return nlohmann::json{{"environment", env_json(cfg.environment)},
                          {"agent", agent_json(cfg.agent)},
                          {"search", search_json(cfg.search)},
                          {"targets", targets}}
        .dump(2);
}

ToolConfig load_tool_config(const std::string& path) {
    if (path.empty()) return {};
    std::ifstream in(path);
    if (!in) throw UsageError("config: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return tool_config_from_json(buf.str());
}

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << text;
}

std::vector<LearningJob> load_corpus(const std::string& dir, const std::string& default_target,
                                     const std::map<std::string, std::string>& targets) {
    if (!fs::is_directory(dir)) throw DataError("corpus: '" + dir + "' is not a directory");
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".csv") {
            files.push_back(entry.path().string());
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("corpus: no .csv files in '" + dir + "'");
    std::vector<LearningJob> jobs;
    for (const auto& f : files) {
        const std::string name = fs::path(f).filename().string();
        const auto it = targets.find(name);
        const std::string target = it != targets.end() ? it->second : default_target;
        jobs.push_back(LearningJob::make(name, load_csv(f, target)));
    }
    return jobs;
}

// Environment/agent settings stored alongside the network in a checkpoint.
struct CheckpointExtra {
    EnvironmentConfig environment;
    AgentConfig agent;
};

std::string checkpoint_extra_json(const EnvironmentConfig& env, const AgentConfig& agent) {
    return nlohmann::json{{"environment", env_json(env)}, {"agent", agent_json(agent)}}.dump();
}

CheckpointExtra parse_checkpoint_extra(const std::string& text) {
    CheckpointExtra extra;
    const nlohmann::json j = nlohmann::json::parse(text);
    if (j.contains("environment")) read_env(j["environment"], extra.environment);
    if (j.contains("agent")) read_agent(j["agent"], extra.agent);
    return extra;
}

int cmd_train(const std::string& corpus, int episodes, const std::string& out,
              const std::string& config_path, bool flat, std::uint64_t seed,
              const std::string& default_target) {
    ToolConfig cfg = load_tool_config(config_path);
    cfg.environment.flat_mode = flat || cfg.environment.flat_mode;

    const std::vector<LearningJob> jobs = load_corpus(corpus, default_target, cfg.targets);
    Agent agent(network_config_for(cfg.environment), cfg.agent, seed);
    Environment env(cfg.environment, agent.network().embedder());

    TrainOptions opts;
    opts.episodes = episodes;
    opts.seed = seed;
    int done = 0;
    opts.on_episode = [&done, episodes](const EpisodeLog&) {
        ++done;
        if (done % 100 == 0) {
            std::cerr << "[gridpipe] episode " << done << "/" << episodes << "\n";
        }
    };
    const TrainResult result = train_corpus(agent, env, jobs, opts);

    save_checkpoint(agent.network(), out, checkpoint_extra_json(cfg.environment, cfg.agent));
    write_file(out + ".metrics.csv", result.metrics_csv());
    std::cout << "trained " << episodes << " episodes on " << jobs.size()
              << " datasets; mean episode reward " << format_double(result.mean_total_reward())
              << "\ncheckpoint: " << out << ".json / " << out << ".bin\nmetrics: " << out
              << ".metrics.csv\n";
    return 0;
}

int cmd_search(const std::string& data, const std::string& target, const std::string& ckpt,
               int k, double beta, const std::string& out_dir, int episodes,
               std::uint64_t seed) {
    std::string extra_text;
    const QNetwork net = load_checkpoint(ckpt, &extra_text);
    const CheckpointExtra extra = parse_checkpoint_extra(extra_text);

    const LearningJob job = LearningJob::make(fs::path(data).filename().string(),
                                              load_csv(data, target));
    SearchConfig scfg;
    scfg.k = k;
    scfg.beta = beta;
    scfg.episodes = episodes;
    scfg.eval_epsilon = extra.agent.eval_epsilon;
    scfg.seed = seed;

    const std::vector<ScoredPipeline> ranked = search(job, net, extra.environment, scfg);

    fs::create_directories(out_dir);
    for (const auto& sp : ranked) {
        write_file((fs::path(out_dir) / ("pipeline_" + std::to_string(sp.rank) + ".json")).string(),
                   sp.pipeline_json);
    }
    write_file((fs::path(out_dir) / "scores.csv").string(), scores_csv(ranked));
    std::cout << "wrote " << ranked.size() << " pipelines and scores.csv to " << out_dir << "\n";
    return 0;
}

int cmd_eval(const std::string& data, const std::string& target, const std::string& ckpt,
             const std::string& mode, int k, double beta, int episodes, double ratio,
             std::uint64_t seed) {
    if (mode != "vanilla" && mode != "ensemble") {
        throw UsageError("eval: --mode must be vanilla or ensemble");
    }
    std::string extra_text;
    const QNetwork net = load_checkpoint(ckpt, &extra_text);
    const CheckpointExtra extra = parse_checkpoint_extra(extra_text);

    const Table full = load_csv(data, target);
    const auto [train, test] = split_train_test(full, ratio, hash_combine(seed, fnv1a64("eval_split")));

    LearningJob job = LearningJob::make(fs::path(data).filename().string(), train);
    SearchConfig scfg;
    scfg.k = k;
    scfg.beta = beta;
    scfg.episodes = episodes;
    scfg.eval_epsilon = extra.agent.eval_epsilon;
    scfg.seed = seed;

    const std::vector<ScoredPipeline> ranked = search(job, net, extra.environment, scfg);
    const PredictResult result = mode == "vanilla"
                                     ? predict_vanilla(ranked, train, test, seed)
                                     : predict_ensemble(ranked, train, test, seed);
    std::cout << "mode=" << mode << " k=" << k
              << " test_accuracy=" << format_double(result.accuracy) << "\n";
    return 0;
}

int cmd_inspect(const std::string& pipeline_path, const std::string& dot_path) {
    const PipelineDag dag = pipeline_from_json(read_file(pipeline_path));
    const FinalizeResult fin = finalize(dag);
    std::cout << "pipeline: " << pipeline_path << "\n"
              << "grid rows: " << dag.grid_rows << "\n"
              << "vertices: " << dag.vertices.size() << "\n"
              << "edges: " << dag.n_edges() << "\n";
    for (const auto& v : dag.vertices) {
        if (v.id == 0) continue;
        const PrimitiveSpec& p = primitive_by_id(v.primitive_id);
        std::cout << "  #" << v.id << " (row " << Grid::row_of(v.id) << ", col "
                  << Grid::column_of(v.id) << ") " << p.name << " <-";
        for (int in : v.inputs) std::cout << ' ' << (in == 0 ? "raw" : "#" + std::to_string(in));
        std::cout << "\n";
    }
    switch (fin.rule) {
        case FinalRule::SingleTerminal:
            std::cout << "final: #" << fin.final_vertex << " (single terminal)\n";
            break;
        case FinalRule::Combiner:
            std::cout << "final: #" << fin.final_vertex << " (combiner)\n";
            break;
        case FinalRule::MajorityVote: {
            std::cout << "final: majority vote over";
            for (int id : fin.vote_vertices) std::cout << " #" << id;
            std::cout << "\n";
            break;
        }
        case FinalRule::Invalid:
            std::cout << "final: invalid (no estimator output)\n";
            break;
    }
    if (!dot_path.empty()) {
        write_file(dot_path, pipeline_to_dot(dag));
        std::cout << "dot: " << dot_path << "\n";
    }
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"gridpipe: reinforcement-learning synthesis of ML pipelines on a 6xN grid"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "Train an agent over a corpus of CSV datasets");
    std::string corpus, out, config_path, default_target = "target";
    int episodes = 2000;
    bool flat = false;
    std::uint64_t seed = 0;
    train->add_option("--corpus", corpus, "Directory of CSV datasets")->required();
    train->add_option("--episodes", episodes, "Training episodes");
    train->add_option("--out", out, "Checkpoint path prefix")->required();
    train->add_option("--config", config_path, "JSON config file");
    train->add_flag("--flat", flat, "Disable the hierarchical plugin (flat action table)");
    train->add_option("--seed", seed, "Random seed");
    train->add_option("--target", default_target, "Target column name (default: target)");

    // search
    auto* search_cmd = app.add_subcommand("search", "Search pipelines for one dataset");
    std::string data, target, ckpt, out_dir;
    int k = 10, search_episodes = 0;
    double beta = 0.5;
    std::uint64_t search_seed = 0;
    search_cmd->add_option("--data", data, "CSV dataset")->required();
    search_cmd->add_option("--target", target, "Target column name")->required();
    search_cmd->add_option("--ckpt", ckpt, "Checkpoint path prefix")->required();
    search_cmd->add_option("--k", k, "Number of pipelines to keep");
    search_cmd->add_option("--beta", beta, "Score mix: beta*Qnorm + (1-beta)*KScore");
    search_cmd->add_option("--episodes", search_episodes, "Search episodes (default 5*k)");
    search_cmd->add_option("--out", out_dir, "Output directory")->required();
    search_cmd->add_option("--seed", search_seed, "Random seed");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Search on a train split and report test accuracy");
    std::string eval_data, eval_target, eval_ckpt, mode = "vanilla";
    int eval_k = 10, eval_episodes = 0;
    double eval_beta = 0.5, ratio = 0.8;
    std::uint64_t eval_seed = 0;
    eval_cmd->add_option("--data", eval_data, "CSV dataset")->required();
    eval_cmd->add_option("--target", eval_target, "Target column name")->required();
    eval_cmd->add_option("--ckpt", eval_ckpt, "Checkpoint path prefix")->required();
    eval_cmd->add_option("--mode", mode, "vanilla | ensemble");
    eval_cmd->add_option("--k", eval_k, "Pipelines searched / ensembled");
    eval_cmd->add_option("--beta", eval_beta, "Score mix parameter");
    eval_cmd->add_option("--episodes", eval_episodes, "Search episodes (default 5*k)");
    eval_cmd->add_option("--ratio", ratio, "Train fraction of the split");
    eval_cmd->add_option("--seed", eval_seed, "Random seed");

    // inspect
    auto* inspect_cmd = app.add_subcommand("inspect", "Summarize a pipeline JSON");
    std::string pipeline_path, dot_path;
    inspect_cmd->add_option("--pipeline", pipeline_path, "Pipeline JSON file")->required();
    inspect_cmd->add_option("--dot", dot_path, "Write a DOT rendering here");

    std::vector<char*> argv;
    std::string prog = "gridpipe";
    argv.push_back(prog.data());
    std::vector<std::string> owned(args);
    for (auto& a : owned) argv.push_back(a.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (app.got_subcommand(train)) {
            return cmd_train(corpus, episodes, out, config_path, flat, seed, default_target);
        }
        if (app.got_subcommand(search_cmd)) {
            return cmd_search(data, target, ckpt, k, beta, out_dir, search_episodes, search_seed);
        }
        if (app.got_subcommand(eval_cmd)) {
            return cmd_eval(eval_data, eval_target, eval_ckpt, mode, eval_k, eval_beta,
                            eval_episodes, ratio, eval_seed);
        }
        if (app.got_subcommand(inspect_cmd)) {
            return cmd_inspect(pipeline_path, dot_path);
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const InvalidPipelineError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

}  // namespace gridpipe
