// Command-line front end: solve, check, sample, quality.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include <harmap/io.hpp>

namespace {

using namespace harmap;

constexpr int kExitOk = 0;
constexpr int kExitInput = 1;
constexpr int kExitNotConverged = 2;

void print_issues(const SchemaError& e) {
    for (const auto& i : e.issues()) std::cerr << "error: " << i.str() << "\n";
}

std::string default_output(const std::string& input) {
    std::filesystem::path p(input);
    std::string stem = p.stem().string();
    return (p.parent_path() / (stem + ".solution.json")).string();
}

struct SolveArgs {
    std::string input, output;
    std::string mode, initial;
    std::optional<double> mu, chi, tol;
    std::optional<int> coarse_levels, max_newton;
    bool verbose = false;
    bool keep_aux = false;
};

int run_solve(const SolveArgs& a) {
    GeometryFile geo = parse_geometry(read_json_file(a.input));
    SolverOverrides flags;
    if (!a.mode.empty()) flags.mode = aux_mode_from_string(a.mode);
    if (!a.initial.empty()) {
        flags.initial = initial_guess_from_string(a.initial);
        if (!flags.initial) throw InputError("unknown initial guess '" + a.initial + "'");
    }
    flags.mu = a.mu, flags.chi = a.chi, flags.tol = a.tol;
    flags.coarse_levels = a.coarse_levels, flags.max_newton = a.max_newton;
    SolverOverrides merged = geo.solver;
    merged.merge(flags);
    SolveSettings s = resolve_settings(merged);
    s.solver.keep_aux = a.keep_aux;
    if (a.verbose) s.solver.log = &std::cerr;
    s.solver.validate();

    Problem pr = build_problem(geo);
    SolveOutcome out = solve_problem(pr, s);
    for (const auto& w : out.warnings) std::cerr << "warning: " << w << "\n";
    const std::string path = a.output.empty() ? default_output(a.input) : a.output;
    write_atomic(path, out.solution.dump(2) + "\n");
    const auto& q = out.solution["quality"];
    std::cout << "status: " << to_string(out.report.status) << "\n"
              << "iterations: " << out.report.iterations << "\n"
              << "residual: " << out.report.final_residual << "\n"
              << "R_N evaluations: " << out.report.rn_evaluations << "\n"
              << "fold count: " << q["fold_count"].get<int>() << "\n"
              << "min detJ: " << q["min_detJ"].get<double>() << "\n";
    if (q["winslow"].is_number()) std::cout << "winslow: " << q["winslow"].get<double>() << "\n";
    std::cout << "written: " << path << "\n";
    if (a.verbose) std::cerr << "wall seconds: " << out.report.wall_seconds << "\n";
    return out.converged ? kExitOk : kExitNotConverged;
}

int run_check(const std::string& input) {
    json doc;
    try {
        doc = read_json_file(input);
    } catch (const SchemaError& e) {
        json rep = {{"errors", json::array()}, {"warnings", json::array()}};
        for (const auto& i : e.issues()) rep["errors"].push_back({{"pointer", i.pointer}, {"message", i.message}});
        std::cout << rep.dump(2) << "\n";
        return kExitInput;
    }
    json rep = check_geometry(doc);
    std::cout << rep.dump(2) << "\n";
    return rep["errors"].empty() ? kExitOk : kExitInput;
}

int run_sample(const std::string& input, const std::string& output, const std::string& format, int res) {
    auto f = sample_format_from_string(format);
    if (!f) throw InputError("unknown format '" + format + "' (expected vtk, svg or csv)");
    LoadedSolution ls = load_solution(read_json_file(input));
    std::string text = sample_solution(ls, res, *f);
    if (output.empty() || output == "-")
        std::cout << text;
    else
        write_atomic(output, text);
    return kExitOk;
}

int run_quality(const std::string& input) {
    LoadedSolution ls = load_solution(read_json_file(input));
    json q = quality_json(ls.problem.topology, solution_maps(ls));
    q["residual_norm"] = solution_residual(ls);
    if (!q["bijective"].get<bool>()) q["winslow"] = "nonbijective";
    std::cout << q.dump(2) << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Folding-free planar spline parameterizations from boundary contours"};
    app.require_subcommand(1);

    SolveArgs sa;
    auto* solve = app.add_subcommand("solve", "Compute a parameterization from a geometry file");
    solve->add_option("input", sa.input, "Geometry JSON")->required()->check(CLI::ExistingFile);
    solve->add_option("-o,--output", sa.output, "Solution JSON (default: <input stem>.solution.json)");
    solve->add_option("--mode", sa.mode, "Auxiliary fields")->check(CLI::IsMember({"full", "xi", "eta"}));
    solve->add_option("--mu", sa.mu, "Denominator regularization");
    solve->add_option("--chi", sa.chi, "Mixed-derivative split in [0, 1]");
    solve->add_option("--coarse-levels", sa.coarse_levels, "Coarse solves before the fine one");
    solve->add_option("--tol", sa.tol, "Relative Newton step tolerance");
    solve->add_option("--max-newton", sa.max_newton, "Newton iteration limit");
    solve->add_option("--initial", sa.initial, "Initial guess")
        ->check(CLI::IsMember({"transfinite", "file", "folded"}));
    solve->add_flag("--verbose", sa.verbose, "One JSON line per Newton iteration on stderr");
    solve->add_flag("--keep-aux", sa.keep_aux, "Store the auxiliary coefficients in the solution");

    std::string check_in;
    auto* check = app.add_subcommand("check", "Validate a geometry file");
    check->add_option("input", check_in, "Geometry JSON")->required()->check(CLI::ExistingFile);

    std::string sample_in, sample_out, format = "vtk";
    int res = 4;
    auto* sample = app.add_subcommand("sample", "Export the mapped grid of a solution");
    sample->add_option("input", sample_in, "Solution JSON")->required()->check(CLI::ExistingFile);
    sample->add_option("-o,--output", sample_out, "Output file ('-' for stdout)");
    sample->add_option("--format", format, "vtk, svg or csv");
    sample->add_option("--resolution", res, "Samples per element and direction")->check(CLI::PositiveNumber);

    std::string quality_in;
    auto* quality = app.add_subcommand("quality", "Report quality measures of a solution");
    quality->add_option("input", quality_in, "Solution JSON")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitInput;
    }

    try {
        if (*solve) return run_solve(sa);
        if (*check) return run_check(check_in);
        if (*sample) return run_sample(sample_in, sample_out, format, res);
        if (*quality) return run_quality(quality_in);
    } catch (const SchemaError& e) {
        print_issues(e);
        return kExitInput;
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    }
    return kExitInput;
}
