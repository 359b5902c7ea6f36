// Copyright (C) 2026 tpkv authors
// SPDX-License-Identifier: Apache-2.0
//

#include "tpkv/commands.hpp"

#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tpkv/metrics.hpp"

namespace tpkv {

namespace {

// One flag set shared by run/verify/sweep; gen uses a subset.
struct Flags {
    std::string trace_path;
    std::string synthetic;
    std::string config_path;
    double thr = 0.0;
    int chunks = 3;
    int chunk_bits = 4;
    std::string order;
    std::string mode = "all";
    std::string mem;
    int lanes = 1;
    int scoreboard = 32;
    std::int64_t jitter = 0;
    std::uint64_t jitter_seed = 0;
    bool verify = false;
    std::string out_path;
    std::string events_path;
    std::string thr_list;
    double corrupt_margins = 0.0;

    // Which of the overriding flags were actually given.
    CLI::Option* thr_opt = nullptr;
    CLI::Option* chunks_opt = nullptr;
    CLI::Option* chunk_bits_opt = nullptr;
    CLI::Option* order_opt = nullptr;
    CLI::Option* mem_opt = nullptr;
    CLI::Option* lanes_opt = nullptr;
    CLI::Option* scoreboard_opt = nullptr;
    CLI::Option* jitter_opt = nullptr;
    CLI::Option* jitter_seed_opt = nullptr;
    CLI::Option* synthetic_opt = nullptr;
};

void add_workload_flags(CLI::App* cmd, Flags& f) {
    cmd->add_option("--trace", f.trace_path, "input trace file");
    f.synthetic_opt =
        cmd->add_option("--synthetic", f.synthetic,
                        "synthetic spec, e.g. peaked:n=512,d=64,k=16,gap=10,seed=1");
    cmd->add_option("--config", f.config_path, "JSON config file (flags override it)");
}

void add_run_flags(CLI::App* cmd, Flags& f) {
    f.thr_opt = cmd->add_option("--thr", f.thr, "probability threshold in [0, 1)");
    f.chunks_opt = cmd->add_option("--chunks", f.chunks, "chunks per key vector");
    f.chunk_bits_opt = cmd->add_option("--chunk-bits", f.chunk_bits, "bits per chunk");
    f.order_opt = cmd->add_option("--order", f.order, "token order: locality or sequential")
                      ->check(CLI::IsMember({"locality", "sequential"}));
    cmd->add_option("--mode", f.mode, "functional, ooo, blocking, or all")
        ->check(CLI::IsMember({"functional", "ooo", "blocking", "all"}));
    f.mem_opt = cmd->add_option(
        "--mem", f.mem, "memory model, e.g. latency=200,bw=64,channels=8,inflight=64");
    f.lanes_opt = cmd->add_option("--lanes", f.lanes, "PE lanes");
    f.scoreboard_opt =
        cmd->add_option("--scoreboard", f.scoreboard, "scoreboard entries per lane");
    f.jitter_opt = cmd->add_option("--jitter", f.jitter, "max extra arrival delay, cycles");
    f.jitter_seed_opt = cmd->add_option("--jitter-seed", f.jitter_seed, "jitter RNG seed");
    // Fault injection for exercising the verifier; deliberately undocumented.
    cmd->add_option("--corrupt-margins", f.corrupt_margins, "")->group("");
}

void parse_mem_string(const std::string& text, MemoryModel& mem) {
    std::istringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        const std::size_t eq = item.find('=');
        if (eq == std::string::npos)
            throw ConfigError("expected key=value in --mem, got '" + item + "'");
        const std::string key = item.substr(0, eq);
        const std::string val = item.substr(eq + 1);
        double num = 0.0;
        std::size_t used = 0;
        try {
            num = std::stod(val, &used);
        } catch (const std::exception&) {
            throw ConfigError("bad value for mem key '" + key + "': " + val);
        }
        if (used != val.size()) throw ConfigError("bad value for mem key '" + key + "': " + val);
        if (key == "latency") mem.latency_cycles = static_cast<std::int64_t>(num);
        else if (key == "bw") mem.bytes_per_cycle = num;
        else if (key == "channels") mem.channels = static_cast<int>(num);
        else if (key == "inflight") mem.max_inflight = static_cast<int>(num);
        else throw ConfigError("unknown mem key '" + key + "'");
    }
}

RunConfig assemble_config(const Flags& f) {
    RunConfig rc = f.config_path.empty() ? RunConfig{} : load_config(f.config_path);
    if (f.thr_opt && f.thr_opt->count()) rc.prune.thr = f.thr;
    if (f.order_opt && f.order_opt->count())
        rc.prune.order_policy =
            f.order == "sequential" ? OrderPolicy::sequential : OrderPolicy::locality;
    int chunks = rc.prune.chunking.chunks_per_vec();
    int bits = rc.prune.chunking.chunk_bits;
    if (f.chunks_opt && f.chunks_opt->count()) chunks = f.chunks;
    if (f.chunk_bits_opt && f.chunk_bits_opt->count()) bits = f.chunk_bits;
    rc.prune.chunking.chunk_bits = bits;
    rc.prune.chunking.total_bits = chunks * bits;
    if (f.mem_opt && f.mem_opt->count()) parse_mem_string(f.mem, rc.mem);
    if (f.lanes_opt && f.lanes_opt->count()) rc.sim.lanes = f.lanes;
    if (f.scoreboard_opt && f.scoreboard_opt->count()) rc.sim.scoreboard_capacity = f.scoreboard;
    if (f.jitter_opt && f.jitter_opt->count()) rc.sim.jitter_cycles = f.jitter;
    if (f.jitter_seed_opt && f.jitter_seed_opt->count()) rc.sim.jitter_seed = f.jitter_seed;
    rc.prune.validate();
    rc.mem.validate();
    rc.sim.validate();
    return rc;
}

AttentionTrace load_workload(const Flags& f, const RunConfig& rc) {
    const bool have_trace = !f.trace_path.empty();
    const bool have_spec = f.synthetic_opt && f.synthetic_opt->count() > 0;
    if (have_trace && have_spec)
        throw ConfigError("--trace and --synthetic are mutually exclusive");
    if (have_trace) return read_trace(f.trace_path);
    if (have_spec) return generate(parse_synthetic_spec(f.synthetic));
    if (rc.synthetic) return generate(*rc.synthetic);
    throw ConfigError("need --trace, --synthetic, or a config file with a synthetic spec");
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os << text;
    if (!os) throw IoError("write failure on " + path);
}

void emit(const nlohmann::json& doc, const std::string& out_path, std::ostream& out) {
    const std::string text = doc.dump(2) + "\n";
    out << text;
    if (!out_path.empty()) write_text(out_path, text);
}

int cmd_run(const Flags& f, std::ostream& out) {
    const RunConfig rc = assemble_config(f);
    const AttentionTrace trace = load_workload(f, rc);
    ExperimentOptions opt;
    opt.mode = parse_run_mode(f.mode);
    opt.verify = f.verify;
    opt.corrupt_margins = f.corrupt_margins;
    const Experiment ex = run_experiment(trace, rc, opt);
    if (!f.events_path.empty()) {
        const SimResult* sim = ex.ooo ? &*ex.ooo : (ex.blocking ? &*ex.blocking : nullptr);
        if (!sim) throw ConfigError("--events needs mode ooo, blocking, or all");
        std::ostringstream ss;
        dump_events(sim->events, ss);
        write_text(f.events_path, ss.str());
    }
    emit(to_json(ex.metrics), f.out_path, out);
    return 0;
}

int cmd_gen(const Flags& f, std::ostream& out) {
    if (!f.synthetic_opt || f.synthetic_opt->count() == 0)
        throw ConfigError("gen needs --synthetic");
    if (f.out_path.empty()) throw ConfigError("gen needs --out");
    const AttentionTrace trace = generate(parse_synthetic_spec(f.synthetic));
    write_trace(trace, f.out_path);
    nlohmann::json j;
    j["written"] = f.out_path;
    j["n_tokens"] = trace.n_tokens;
    j["d_h"] = trace.d_h;
    out << j.dump(2) << "\n";
    return 0;
}

int cmd_verify(const Flags& f, std::ostream& out) {
    const RunConfig rc = assemble_config(f);
    const AttentionTrace trace = load_workload(f, rc);
    ExperimentOptions opt;
    opt.mode = RunMode::functional;
    opt.corrupt_margins = f.corrupt_margins;
    const Experiment ex = run_experiment(trace, rc, opt);

    nlohmann::json pruned = nlohmann::json::array();
    for (const TokenState& st : ex.functional.states) {
        if (st.status != TokenStatus::pruned) continue;
        const double p = ex.oracle.probabilities.at(st.token_index);
        pruned.push_back({{"token", st.token_index},
                          {"pruned_at_chunk", st.chunk_level},
                          {"true_probability", p},
                          {"violation", p >= rc.prune.thr}});
    }
    nlohmann::json j;
    j["thr"] = rc.prune.thr;
    j["n_tokens"] = ex.inst.n();
    j["survivors"] = static_cast<int>(ex.functional.survivors.size());
    j["pruned"] = pruned;
    j["violations"] = ex.violating_tokens;
    j["pass"] = ex.violating_tokens.empty();
    emit(j, f.out_path, out);
    return ex.violating_tokens.empty() ? 0 : 2;
}

int cmd_sweep(const Flags& f, std::ostream& out) {
    if (f.thr_list.empty()) throw ConfigError("sweep needs --thr-list");
    RunConfig rc = assemble_config(f);
    const AttentionTrace trace = load_workload(f, rc);

    std::vector<double> thrs;
    std::istringstream ss(f.thr_list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        std::size_t used = 0;
        double t = 0.0;
        try {
            t = std::stod(item, &used);
        } catch (const std::exception&) {
            throw ConfigError("bad threshold '" + item + "'");
        }
        if (used != item.size()) throw ConfigError("bad threshold '" + item + "'");
        thrs.push_back(t);
    }
    if (thrs.empty()) throw ConfigError("sweep needs at least one threshold");

    ExperimentOptions opt;
    opt.mode = parse_run_mode(f.mode);
    opt.verify = f.verify;
    nlohmann::json arr = nlohmann::json::array();
    for (double t : thrs) {
        rc.prune.thr = t;
        rc.prune.validate();
        arr.push_back(to_json(run_experiment(trace, rc, opt).metrics));
    }
    emit(arr, f.out_path, out);
    return 0;
}

void error_json(std::ostream& err, const char* type, const std::string& message) {
    nlohmann::json j;
    j["error"] = {{"type", type}, {"message", message}};
    err << j.dump() << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"progressive KV-cache token pruning simulator"};
    app.name("tpkv");
    app.require_subcommand(1);

    Flags run_f, gen_f, verify_f, sweep_f;

    CLI::App* run = app.add_subcommand("run", "run one instance and emit metrics JSON");
    add_workload_flags(run, run_f);
    add_run_flags(run, run_f);
    run->add_flag("--verify", run_f.verify, "fail (exit 2) if any pruned token is dominant");
    run->add_option("--out", run_f.out_path, "also write the JSON here");
    run->add_option("--events", run_f.events_path, "write the scheduler event trace (CSV)");

    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic trace file");
    gen->add_option("--synthetic", gen_f.synthetic, "synthetic spec")->required();
    gen_f.synthetic_opt = gen->get_option("--synthetic");
    gen->add_option("--out", gen_f.out_path, "output trace path")->required();

    CLI::App* verify = app.add_subcommand(
        "verify", "report every pruned token's true probability, exit 2 on violation");
    add_workload_flags(verify, verify_f);
    add_run_flags(verify, verify_f);
    verify->add_option("--out", verify_f.out_path, "also write the report here");

    CLI::App* sweep = app.add_subcommand("sweep", "run a threshold sweep, emit a JSON array");
    add_workload_flags(sweep, sweep_f);
    add_run_flags(sweep, sweep_f);
    sweep->add_option("--thr-list", sweep_f.thr_list, "comma-separated thresholds")->required();
    sweep->add_flag("--verify", sweep_f.verify, "fail if any run prunes a dominant token");
    sweep->add_option("--out", sweep_f.out_path, "also write the JSON here");

    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("tpkv");
    for (const std::string& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        app.exit(e, out, err);
        return 0;
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return 1;
    }

    try {
        if (run->parsed()) return cmd_run(run_f, out);
        if (gen->parsed()) return cmd_gen(gen_f, out);
        if (verify->parsed()) return cmd_verify(verify_f, out);
        if (sweep->parsed()) return cmd_sweep(sweep_f, out);
        error_json(err, "ConfigError", "no subcommand selected");
        return 1;
    } catch (const VerificationError& e) {
        error_json(err, "VerificationError", e.what());
        return 2;
    } catch (const FormatError& e) {
        error_json(err, "FormatError", e.what());
        return 3;
    } catch (const IoError& e) {
        error_json(err, "IoError", e.what());
        return 3;
    } catch (const ConfigError& e) {
        error_json(err, "ConfigError", e.what());
        return 1;
    } catch (const Error& e) {
        error_json(err, "Error", e.what());
        return 1;
    } catch (const std::exception& e) {
        error_json(err, "InternalError", e.what());
        return 1;
    }
}

}  // namespace tpkv
