#include "helpers.hpp"

#include <doctest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

fs::path scratch() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / ("wareg_cli_" + std::to_string(::getpid()));
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

Run wareg(const std::string& args) {
    const fs::path out = scratch() / "stdout.txt", err = scratch() / "stderr.txt";
    const std::string cmd = std::string("\"") + WAREG_PATH + "\" " + args + " > \"" + out.string() + "\" 2> \"" + err.string() + "\"";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

fs::path write_file(const std::string& name, const std::string& text) {
    const fs::path p = scratch() / name;
    std::ofstream(p, std::ios::binary) << text;
    return p;
}

fs::path simulated_csv() {
    static const fs::path p = [] {
        std::ostringstream csv;
        wa::write_long_csv(csv, wa::test::small_simulated(400, 5));
        return write_file("sim.csv", csv.str());
    }();
    return p;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST_CASE("cli: version and usage errors") {
    const auto v = wareg("--version");
    CHECK(v.code == 0);
    CHECK(v.out.find("0.1.0") != std::string::npos);
    CHECK(wareg("fit --bogus").code == 2);
    CHECK(wareg("").code == 2);
}

TEST_CASE("cli: missing input file exits 1 naming the path") {
    const auto r = wareg("fit --data /no/such/file.csv --knots 1,2");
    CHECK(r.code == 1);
    CHECK(r.err.find("/no/such/file.csv") != std::string::npos);
}

TEST_CASE("cli: fit writes parseable JSON with p*R coefficients") {
    const auto out = scratch() / "fit.json";
    const auto r = wareg("fit --data " + q(simulated_csv()) + " --formula 'Surv(time,status) ~ Z1 + Z2' --weights-recur 1,1 --knots 1,2,3 --report --out " + q(out));
    REQUIRE(r.code == 0);
    const json j = json::parse(slurp(out));
    CHECK(j["est"].size() == 3 * 3);
    CHECK(j["vcov"].size() == 9);
    CHECK(j["coefficient_names"][0] == "(Intercept)");
    CHECK(j["diagnostics"]["score_norm"].get<double>() <= 1e-8);
    CHECK(j["report"]["ci"].size() == 9);
    CHECK(j["report"]["wald"][1]["df"] == 3);
    CHECK(j["manifest"]["inputs"][0]["sha256"].get<std::string>().size() == 64);
    CHECK(j["manifest"]["command"] == "fit");

    const auto no_int = wareg("fit --data " + q(simulated_csv()) + " --formula 'Surv(time,status) ~ 0 + Z1' --knots 1,2,3 --ipcw km");
    REQUIRE(no_int.code == 0);
    CHECK(json::parse(no_int.out)["est"].size() == 3);
    const auto minus_one = wareg("fit --data " + q(simulated_csv()) + " --formula 'Surv(time,status) ~ Z1 + Z2 - 1' --knots 1,2,3");
    REQUIRE(minus_one.code == 0);
    CHECK(json::parse(minus_one.out)["est"].size() == 6);
}

TEST_CASE("cli: renamed time and status columns and cluster flag") {
    const auto p = write_file("renamed.csv",
                              "id,site,futime,event,x\n1,a,0.5,1,0\n1,a,2.0,2,0\n2,a,1.5,0,1\n3,b,0.7,1,1\n3,b,2.5,2,1\n4,b,3.0,0,0\n"
                              "5,c,0.4,1,1\n5,c,1.1,1,1\n5,c,2.2,2,1\n6,c,2.8,0,0\n");
    const auto r = wareg("fit --data " + q(p) + " --formula 'Surv(futime,event) ~ x' --cluster site --ipcw km --knots 0,2 --basis tf --tau-grid 1.0");
    REQUIRE(r.code == 0);
    const json j = json::parse(r.out);
    CHECK(j["diagnostics"]["cluster_mode"] == true);
    CHECK(j["diagnostics"]["n_units"] == 3);
}

TEST_CASE("cli: zero events under the log link exits 2") {
    const auto p = write_file("quiet.csv", "id,time,status,x\n1,2.0,0,0\n2,3.0,0,1\n3,2.5,0,1\n");
    const auto r = wareg("fit --data " + q(p) + " --formula 'Surv(time,status) ~ x' --weights-recur 1 --ipcw km --basis tf --knots 0,1 --tau-grid 1");
    CHECK(r.code == 2);
    CHECK(r.err.find("score has no root under log link") != std::string::npos);
    CHECK(r.err.find("estimator") != std::string::npos);
}

TEST_CASE("cli: predict") {
    const auto fit = scratch() / "pfit.json";
    REQUIRE(wareg("fit --data " + q(simulated_csv()) + " --formula 'Surv(time,status) ~ Z1 + Z2' --knots 1,2,3 --out " + q(fit)).code == 0);

    const auto preds = scratch() / "pred.csv";
    const auto r = wareg("predict --fit " + q(fit) + " --newdata " + q(simulated_csv()) + " --out " + q(preds));
    REQUIRE(r.code == 0);
    std::istringstream lines(slurp(preds));
    std::string line;
    std::getline(lines, line);
    CHECK(line == "id,t,mu,lb,ub");
    int rows = 0;
    while (std::getline(lines, line)) {
        std::istringstream f(line);
        std::string id, t, mu, lb, ub;
        std::getline(f, id, ',');
        std::getline(f, t, ',');
        std::getline(f, mu, ',');
        std::getline(f, lb, ',');
        std::getline(f, ub, ',');
        const double m = std::stod(mu), l = std::stod(lb), u = std::stod(ub);
        CHECK(std::isfinite(m));
        CHECK(l <= m);
        CHECK(m <= u);
        ++rows;
    }
    CHECK(rows == 400 * 3);
    CHECK(fs::exists(preds.string() + ".manifest.json"));

    const auto empty = write_file("empty.csv", "id,Z1,Z2\n");
    const auto e = wareg("predict --fit " + q(fit) + " --newdata " + q(empty));
    CHECK(e.code == 0);
    CHECK(e.out == "id,t,mu,lb,ub\n");

    const auto late = write_file("late.csv", "id,Z1,Z2,t\n1,1,0.5,9.0\n");
    const auto w = wareg("predict --fit " + q(fit) + " --newdata " + q(late));
    CHECK(w.code == 0);
    CHECK(w.err.find("warning") != std::string::npos);
    CHECK(w.out.find("1,9,") != std::string::npos);

    const auto wrong = write_file("wrong.csv", "id,Z1\n1,1\n");
    CHECK(wareg("predict --fit " + q(fit) + " --newdata " + q(wrong)).code == 2);
}

TEST_CASE("cli: cv with a singleton grid selects that configuration") {
    const auto out = scratch() / "cv.csv";
    const auto r = wareg("--seed 3 cv --data " + q(simulated_csv()) + " --formula 'Surv(time,status) ~ 0 + Z1 + Z2' --basis-set st --n-int-vec 2 --time-range 0,3 --K 3 --out " + q(out));
    REQUIRE(r.code == 0);
    const json sel = json::parse(slurp(out.string() + ".selection.json"));
    CHECK(sel["selected"]["config"] == "st/d0/k2/log");
    CHECK(sel["n_configurations"] == 1);
    CHECK(slurp(out).find("st/d0/k2/log,st,0,2,log,3,1,") != std::string::npos);
}

TEST_CASE("cli: simulate is reproducible and rejects unknown scenarios") {
    const auto a = scratch() / "m1.csv", b = scratch() / "m2.csv";
    const std::string args = "--seed 7 simulate --scenario 'I(b)' --replicates 2 --n 300 --superpop 20000 --eval-times 1,2 --out ";
    REQUIRE(wareg(args + q(a)).code == 0);
    REQUIRE(wareg(args + q(b)).code == 0);
    CHECK(slurp(a) == slurp(b));
    CHECK(slurp(a).rfind("scenario,time,coefficient,true,mean_estimate,abias,mcsd,aese,cp", 0) == 0);
    const json ma = json::parse(slurp(a.string() + ".manifest.json"));
    CHECK(ma["seed"] == 7);

    const auto bad = wareg("simulate --scenario 'Q(z)'");
    CHECK(bad.code == 2);
    CHECK(bad.err.find("I(a), I(b)") != std::string::npos);

    const auto dump = wareg("simulate --scenario CRT --dump-scenario");
    REQUIRE(dump.code == 0);
    const auto file = write_file("crt.json", dump.out);
    const auto again = wareg("simulate --scenario " + q(file) + " --dump-scenario");
    CHECK(again.out == dump.out);

    const auto dir = scratch() / "raw";
    REQUIRE(wareg("--seed 2 simulate --scenario 'IC(a)' --replicates 1 --n 200 --superpop 5000 --emit-data " + q(dir) + " --out " + q(scratch() / "m3.csv")).code == 0);
    CHECK(fs::exists(dir / "replicate_1.csv"));
}
