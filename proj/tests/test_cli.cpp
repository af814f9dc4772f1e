#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <string>
#include <sys/wait.h>

#include "flowsim/events.hpp"
#include "flowsim/lob.hpp"
#include "flowsim/rng.hpp"
#include "flowsim/text_io.hpp"

#include "test_util.hpp"

using namespace flowsim;
using namespace testutil;

namespace {

struct CliResult {
    int code = -1;
    std::string output;  // stdout and stderr interleaved
};

CliResult run_cli(const std::string& args) {
    const std::string cmd = std::string(FLOWSIM_CLI_PATH) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    CliResult result;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof(buf), pipe)) result.output.append(buf, n);
    const int status = pclose(pipe);
    result.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

bool contains(const std::string& haystack, const std::string& needle) {
    return haystack.find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("decode splits composite tokens with the default bases") {
    const CliResult anchor = run_cli("decode 6011");
    CHECK(anchor.code == 0);
    CHECK(anchor.output == "0,1,7,7,11\n");

    const CliResult multi = run_cli("decode 0 16383");
    CHECK(multi.code == 0);
    CHECK(multi.output == "0,0,0,0,0\n1,1,15,15,15\n");
}

TEST_CASE("exit codes: usage 2, data 3, success 0") {
    CHECK(run_cli("no-such-command").code == 2);
    CHECK(run_cli("decode").code == 2);  // missing required positional
    CHECK(run_cli("--help").code == 0);

    const CliResult oob = run_cli("decode 16384");
    CHECK(oob.code == 3);
    CHECK(contains(oob.output, "error: TokenOutOfRange:"));

    const CliResult intent = run_cli("decode 5 --intent");
    CHECK(intent.code == 2);
    CHECK(contains(intent.output, "error: MissingSchema:"));

    const CliResult missing = run_cli("encode --data /nonexistent.csv --schema /nonexistent.schema");
    CHECK(missing.code == 3);
    CHECK(contains(missing.output, "error: FileUnreadable:"));
}

TEST_CASE("end-to-end pipeline over the command line") {
    TempDir dir;
    Rng rng(7);
    EventStream stream = random_stream(rng, 900, 100.0, 1e6);
    const std::string data = dir.file("data.csv");
    write_stream(stream, data, StreamFormat::Csv);

    // Calibrate a schema.
    const std::string schema = dir.file("schema.txt");
    const CliResult cal = run_cli("calibrate-tokenizer --data " + data + " --out " + schema);
    CHECK(cal.code == 0);
    CHECK(read_text_file(schema).rfind("tokenizer-schema v1\n", 0) == 0);

    // Encode the stream against it.
    const CliResult enc = run_cli("encode --data " + data + " --schema " + schema + " --out -");
    CHECK(enc.code == 0);
    CHECK(enc.output.rfind("liquidity,scope,price_level,trade\n", 0) == 0);
    std::size_t lines = 0;
    for (char c : enc.output)
        if (c == '\n') ++lines;
    CHECK(lines == 901);  // header + one tuple per event

    // Decode with intent resolution.
    const CliResult dec = run_cli("decode 6011 --schema " + schema + " --intent");
    CHECK(dec.code == 0);
    CHECK(dec.output.rfind("0,1,7,7,11 ", 0) == 0);
    CHECK(contains(dec.output, "action=ADD"));
    CHECK(contains(dec.output, "side=SELL"));
    CHECK(contains(dec.output, "volume="));

    // Fit the zero-intelligence baseline and sample from it.
    const std::string zi_params = dir.file("zi.params");
    const CliResult fit = run_cli("fit-zi --data " + data + " --gmm-components 1 --out " + zi_params);
    CHECK(fit.code == 0);
    CHECK(read_text_file(zi_params).rfind("zi-params v1\n", 0) == 0);

    const std::string generated = dir.file("gen.csv");
    const CliResult gen = run_cli("gen-zi --params " + zi_params + " --n 400 --seed 9 --asset SIM --adv 1e6 --p0 100 --out " + generated);
    CHECK(gen.code == 0);
    CHECK(contains(gen.output, "events=400"));
    const EventStream back = read_stream(generated, StreamFormat::Csv);
    CHECK(back.events.size() == 400);
    CHECK(back.meta.asset_id == "SIM");

    // Replay through the matching engine.
    const std::string replay_dir = dir.file("replay");
    const CliResult rep = run_cli("replay --data " + data + " --out-dir " + replay_dir);
    CHECK(rep.code == 0);
    CHECK(contains(rep.output, "events=900"));
    CHECK(read_text_file(replay_dir + "/fills.csv").rfind(std::string(kFillsCsvHeader) + "\n", 0) == 0);
    CHECK(read_text_file(replay_dir + "/series.csv").rfind(std::string(kSeriesCsvHeader) + "\n", 0) == 0);
    CHECK(read_text_file(replay_dir + "/orders.csv").rfind(std::string(kOrdersCsvHeader) + "\n", 0) == 0);

    // Self-comparison sanity checks.
    const CliResult vsim = run_cli("validate-sim --data " + data);
    CHECK(vsim.code == 0);
    CHECK(contains(vsim.output, "volume_correlation=1 "));
    CHECK(contains(vsim.output, "lot_count_correlation=1"));

    const std::string fidelity = dir.file("fidelity.csv");
    const CliResult efd = run_cli("eval-fidelity --ref-series " + replay_dir + "/series.csv --ref-orders " +
                                  replay_dir + "/orders.csv --cand-series " + replay_dir +
                                  "/series.csv --cand-orders " + replay_dir + "/orders.csv --intervals 1 --out " +
                                  fidelity);
    CHECK(efd.code == 0);
    CHECK(contains(efd.output, "rows=7"));
    const std::string fidelity_text = read_text_file(fidelity);
    CHECK(fidelity_text.rfind("quantity,ks,wasserstein\n", 0) == 0);
    CHECK(contains(fidelity_text, "spread,0,0"));

    const std::string stylized = dir.file("stylized.csv");
    const CliResult est = run_cli("eval-stylized --series " + replay_dir +
                                  "/series.csv --interval 1 --max-lag 5 --kurtosis-intervals 1 5 --out " +
                                  stylized);
    CHECK(est.code == 0);
    const std::string stylized_text = read_text_file(stylized);
    CHECK(stylized_text.rfind("metric,interval,lag,value,band\n", 0) == 0);
    CHECK(contains(stylized_text, "acf_raw,1,0,1,"));  // lag-0 autocorrelation is exactly 1
    CHECK(contains(stylized_text, "kurtosis,5,0,"));

    const std::string drift = dir.file("drift.csv");
    const CliResult edr = run_cli("eval-drift --period-a " + data + " --period-b " + data + " --out " + drift);
    CHECK(edr.code == 0);
    CHECK(contains(edr.output, "rows=5"));
    const std::string drift_text = read_text_file(drift);
    CHECK(drift_text.rfind("feature,ks,wasserstein,period_a,period_b\n", 0) == 0);
    CHECK(contains(drift_text, "midprice,0,0,"));
}
