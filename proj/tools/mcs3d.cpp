#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "mcs3d/bench.hpp"
#include "mcs3d/client.hpp"
#include "mcs3d/cloud_ops.hpp"
#include "mcs3d/error.hpp"
#include "mcs3d/ply.hpp"
#include "mcs3d/registration.hpp"
#include "mcs3d/scanner.hpp"
#include "mcs3d/scene.hpp"
#include "mcs3d/server.hpp"

using namespace mcs3d;
using nlohmann::json;

namespace {

std::vector<Eigen::Vector2d> parse_waypoints(const std::string& text) {
    std::vector<Eigen::Vector2d> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ';')) {
        const auto comma = item.find(',');
        if (comma == std::string::npos) throw ParameterError("waypoint '" + item + "' is not x,y");
        out.emplace_back(std::stod(item.substr(0, comma)), std::stod(item.substr(comma + 1)));
    }
    if (out.size() < 2) throw ParameterError("a trajectory needs at least two waypoints");
    return out;
}

// Every state change is persisted with write-then-rename, so exiting immediately is safe.
void on_signal(int) { std::_Exit(0); }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mobile 3D crowdsensing toolkit: ingestion server, simulators, registration and benchmarks"};
    app.require_subcommand(1);

    // serve
    ServerConfig scfg;
    scfg.apply_environment();
    auto* serve = app.add_subcommand("serve", "Run the REST ingestion server");
    serve->add_option("--data-dir", scfg.data_dir, "Persistence directory (default $DATA_DIR; empty keeps state in memory)");
    serve->add_option("--precision", scfg.geohash_precision, "Geohash precision of region shards")
        ->check(CLI::Range(1, 12))
        ->capture_default_str();
    serve->add_option("--port", scfg.port, "TCP port (0 picks one)")->capture_default_str();
    serve->add_option("--bind", scfg.bind_address, "Bind address")->capture_default_str();
    serve->add_option("--voxel", scfg.pipeline.voxel, "Integration voxel size in meters")->capture_default_str();

    // simulate
    auto* simulate = app.add_subcommand("simulate", "Drive a running server with simulated devices");
    simulate->require_subcommand(1);
    std::string host = "127.0.0.1";
    int port = 8080;
    std::uint64_t scene_seed = 42;
    std::vector<double> extent{123.0, 152.0};
    std::uint64_t seed = 1;
    for (auto* sub : {simulate->add_subcommand("passive", "One passive scanning session along a walk"),
                      simulate->add_subcommand("active", "Scripted players of the territory game")}) {
        sub->add_option("--host", host)->capture_default_str();
        sub->add_option("--port", port)->capture_default_str();
        sub->add_option("--scene-seed", scene_seed, "Synthetic city seed")->capture_default_str();
        sub->add_option("--extent", extent, "City extent in meters (x y)")->expected(2)->capture_default_str();
        sub->add_option("--seed", seed, "Simulation seed")->capture_default_str();
    }
    auto* passive = simulate->get_subcommand("passive");
    std::string trajectory_text;
    double walk_length = 200.0;
    std::size_t chunk_threshold = kChunkThreshold;
    std::string chunk_dir;
    bool no_wait = false;
    passive->add_option("--trajectory", trajectory_text, "Waypoints 'x,y;x,y;...' in scene meters");
    passive->add_option("--length", walk_length, "Street walk length when no trajectory is given")->capture_default_str();
    passive->add_option("--chunk-threshold", chunk_threshold, "Upload once buffered points exceed this")
        ->capture_default_str();
    passive->add_option("--save-chunks", chunk_dir, "Also write each chunk as PLY into this directory");
    passive->add_flag("--no-wait", no_wait, "Do not wait for integration jobs");
    auto* active = simulate->get_subcommand("active");
    ActiveRunConfig acfg;
    std::vector<double> location;
    active->add_option("--agents", acfg.agents)->capture_default_str();
    active->add_option("--steps", acfg.steps)->capture_default_str();
    active->add_option("--location", location, "lat lon of the game cell (default: city centre)")->expected(2);

    // register
    auto* reg = app.add_subcommand("register", "Register a source cloud onto a target cloud");
    std::string src_path, dst_path, out_path;
    PipelineConfig pcfg;
    bool no_sor = false;
    reg->add_option("src", src_path, "Source PLY")->required()->check(CLI::ExistingFile);
    reg->add_option("dst", dst_path, "Target PLY")->required()->check(CLI::ExistingFile);
    reg->add_option("--voxel", pcfg.voxel, "Voxel size V in meters")->capture_default_str();
    reg->add_option("--ransac-n", pcfg.ransac.n, "Correspondences per RANSAC sample")->capture_default_str();
    reg->add_option("--max-iterations", pcfg.ransac.max_iterations)->capture_default_str();
    reg->add_option("--seed", pcfg.ransac.rng_seed)->capture_default_str();
    reg->add_flag("--no-sor", no_sor, "Skip statistical outlier removal");
    reg->add_option("--out", out_path, "Write the transformed source here");

    // convert
    auto* conv = app.add_subcommand("convert", "Filter and re-encode a PLY file");
    std::string in_path, conv_out;
    std::optional<double> filter_depth;
    std::optional<std::uint32_t> filter_conf;
    std::string to = "binary";
    conv->add_option("input", in_path)->required()->check(CLI::ExistingFile);
    conv->add_option("output", conv_out)->required();
    conv->add_option("--filter-depth", filter_depth, "Drop points deeper than this (meters)");
    conv->add_option("--filter-confidence", filter_conf, "Drop points below this confidence level");
    conv->add_option("--to", to, "Output encoding")->check(CLI::IsMember({"binary", "text"}))->capture_default_str();

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "Benchmarks");
    bench_cmd->require_subcommand(1);
    auto* mask = bench_cmd->add_subcommand("mask-experiment", "Masked-subregion registration experiment");
    bench::ExperimentConfig ecfg;
    std::string input_ply, csv_path;
    mask->add_option("--input", input_ply, "City-scale PLY to use instead of the synthetic city")
        ->check(CLI::ExistingFile);
    mask->add_option("--scene-seed", scene_seed)->capture_default_str();
    mask->add_option("--ratios", ecfg.removal_ratios)->delimiter(',')->capture_default_str();
    mask->add_option("--n", ecfg.n_values)->delimiter(',')->capture_default_str();
    mask->add_option("--voxels", ecfg.voxel_values)->delimiter(',')->capture_default_str();
    mask->add_option("--trials", ecfg.trials)->capture_default_str();
    mask->add_option("--seed", ecfg.seed)->capture_default_str();
    mask->add_option("--max-iterations", ecfg.ransac_max_iterations)->capture_default_str();
    mask->add_flag("--full-rotation", ecfg.full_rotation, "Random rotation axis instead of z");
    mask->add_option("--csv", csv_path, "Write per-trial and aggregate rows here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (serve->parsed()) {
            Server server(scfg);
            server.start();
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            std::cerr << "listening on " << scfg.bind_address << ":" << server.port()
                      << (scfg.data_dir.empty() ? " (in-memory)" : " data=" + scfg.data_dir.string()) << "\n";
            server.wait();
            return 0;
        }
        if (simulate->parsed()) {
            const auto scene = generate_scene(scene_seed, {extent[0], extent[1]});
            ApiClient api(host, port);
            if (passive->parsed()) {
                Trajectory traj;
                if (trajectory_text.empty())
                    traj = street_trajectory(scene, walk_length, seed);
                else
                    traj.waypoints = parse_waypoints(trajectory_text);
                PassiveScanConfig pc;
                pc.chunk_threshold = chunk_threshold;
                pc.seed = seed;
                const auto run = simulate_passive(api, scene, traj, SensorModel{}, pc, !no_wait);
                if (!chunk_dir.empty()) {
                    std::filesystem::create_directories(chunk_dir);
                    for (std::size_t i = 0; i < run.scan.chunks.size(); ++i)
                        ply::write_file(chunk_dir + "/chunk_" + std::to_string(i) + ".ply",
                                        ply::write(run.scan.chunks[i], ply::Encoding::Binary));
                }
                json out = {{"session_id", run.session_id}, {"frames", run.scan.poses.size()},
                            {"trajectory_length", traj.length()}, {"acks", run.acks}, {"jobs", run.jobs}};
                std::cout << out.dump(2) << "\n";
            } else {
                acfg.seed = seed;
                const LatLon loc = location.size() == 2 ? LatLon{location[0], location[1]}
                                                        : scene.frame().to_geo(scene.extent / 2.0);
                const auto run = simulate_active(api, loc, acfg);
                json hist = json::array();
                for (const auto& h : run.history) hist.push_back({{"nodes", h.total}, {"colored", h.colored}});
                std::cout << json{{"geohash", run.geohash}, {"history", hist}, {"scores", run.final_game.at("scores")}}.dump(2)
                          << "\n";
            }
            return 0;
        }
        if (reg->parsed()) {
            pcfg.apply_sor = !no_sor;
            const auto src = ply::parse(ply::read_file(src_path));
            const auto dst = ply::parse(ply::read_file(dst_path));
            const auto r = register_clouds(src, dst, pcfg);
            std::cout << result_to_json(r).dump(2) << "\n";
            if (!out_path.empty()) ply::write_file(out_path, ply::write(transform_cloud(src, r.transform), ply::Encoding::Binary));
            return r.status == RegistrationStatus::Success ? 0 : 2;
        }
        if (conv->parsed()) {
            auto cloud = ply::parse(ply::read_file(in_path));
            const std::size_t before = cloud.size();
            if (filter_depth || filter_conf) {
                FilterConfig f;
                f.max_depth = filter_depth.value_or(std::numeric_limits<double>::infinity());
                f.min_confidence = filter_conf.value_or(0);
                cloud = filter_reliability(cloud, f).cloud;
            }
            ply::write_file(conv_out, ply::write(cloud, ply::parse_encoding(to)));
            std::cerr << before << " -> " << cloud.size() << " points\n";
            return 0;
        }
        if (mask->parsed()) {
            bench::ExperimentReport report;
            auto progress = [](const bench::TrialRecord& r) {
                std::cerr << "trial " << r.trial << " ratio " << r.ratio << " N " << r.n << " V " << r.voxel << ": "
                          << (r.success ? "ok" : "miss") << " (" << status_name(r.result.status) << ", "
                          << r.result.total_seconds << " s)\n";
            };
            if (input_ply.empty())
                report = bench::run_masking_experiment(generate_scene(scene_seed, ecfg.region_extent), ecfg, progress);
            else
                report = bench::run_masking_experiment(ply::parse(ply::read_file(input_ply)), ecfg, progress);
            std::cout << bench::summary_text(report);
            if (!csv_path.empty()) {
                std::ofstream f(csv_path);
                bench::emit_report(report, f);
            }
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
