#pragma once

#include <sys/wait.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace testing {

namespace fs = std::filesystem;

inline bool rel_close(double got, double want, double tol)
{
    if (want == 0.0)
        return std::abs(got) <= tol;
    return std::abs(got - want) <= tol * std::abs(want);
}

inline std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

inline void spit(const fs::path& p, const std::string& text)
{
    std::ofstream out(p, std::ios::binary);
    out << text;
}

class TempDir {
public:
    TempDir()
    {
        static std::atomic<int> counter{0};
        std::random_device rd;
        path_ = fs::temp_directory_path() /
                ("relscale-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
        fs::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

inline std::string shell_quote(const std::string& s)
{
    std::string q = "'";
    for (char c : s) {
        if (c == '\'')
            q += "'\\''";
        else
            q.push_back(c);
    }
    return q + "'";
}

/// Runs the installed CLI binary as a separate process.
inline CliResult run_cli(const std::vector<std::string>& args)
{
    TempDir scratch;
    std::string cmd = shell_quote(RELSCALE_CLI);
    for (const auto& a : args)
        cmd += " " + shell_quote(a);
    cmd += " > " + shell_quote((scratch / "stdout").string()) + " 2> " + shell_quote((scratch / "stderr").string());
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(scratch / "stdout");
    r.err = slurp(scratch / "stderr");
    return r;
}

inline fs::path fixture(const std::string& name)
{
    return fs::path(RELSCALE_FIXTURES) / name;
}

} // namespace testing
