#include "bks/launcher.hpp"

#include <cerrno>
#include <csignal>
#include <cstring>
#include <map>
#include <sstream>

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include "bks/errors.hpp"

extern char** environ;

namespace bks {

namespace {

std::string describe(const ChildStatus& c) {
  if (c.term_signal) {
    return detail::str("rank ", c.rank, " killed by signal ", c.term_signal, " (", strsignal(c.term_signal), ")");
  }
  return detail::str("rank ", c.rank, " exited with code ", c.exit_code);
}

} // namespace

LaunchReport launch_local_world(
    const std::string& program,
    const std::vector<std::string>& args,
    int world) {
  BKS_CHECK(world >= 1, UsageError, "launch world must be >= 1");
  std::map<pid_t, int> running;
  LaunchReport report;
  report.children.resize(static_cast<std::size_t>(world));

  auto terminate_all = [&] {
    for (const auto& [pid, rank] : running) {
      ::kill(pid, SIGTERM);
    }
  };

  for (int rank = 0; rank < world; ++rank) {
    std::vector<std::string> argv_s{program};
    argv_s.insert(argv_s.end(), args.begin(), args.end());
    argv_s.push_back("--rank");
    argv_s.push_back(std::to_string(rank));
    std::vector<char*> argv;
    for (auto& a : argv_s) {
      argv.push_back(a.data());
    }
    argv.push_back(nullptr);
    pid_t pid = 0;
    const int rc = ::posix_spawn(&pid, program.c_str(), nullptr, nullptr, argv.data(), environ);
    if (rc != 0) {
      terminate_all();
      for (const auto& [p, r] : running) {
        ::waitpid(p, nullptr, 0);
      }
      throw Error(detail::str("failed to spawn rank ", rank, ": ", std::strerror(rc)));
    }
    running[pid] = rank;
    report.children[static_cast<std::size_t>(rank)].rank = rank;
  }

  std::vector<std::string> failures;
  bool terminated = false;
  while (!running.empty()) {
    int status = 0;
    const pid_t pid = ::waitpid(-1, &status, 0);
    if (pid < 0) {
      if (errno == EINTR) {
        continue;
      }
      throw Error(detail::str("waitpid: ", std::strerror(errno)));
    }
    auto it = running.find(pid);
    if (it == running.end()) {
      continue;
    }
    auto& child = report.children[static_cast<std::size_t>(it->second)];
    running.erase(it);
    if (WIFEXITED(status)) {
      child.exit_code = WEXITSTATUS(status);
    } else if (WIFSIGNALED(status)) {
      child.term_signal = WTERMSIG(status);
    }
    const bool failed = child.exit_code != 0 || child.term_signal != 0;
    if (failed && !terminated) {
      failures.push_back(describe(child));
      report.ok = false;
      terminated = true;
      terminate_all();
    }
  }
  if (report.ok) {
    report.message = detail::str("all ", world, " ranks exited cleanly");
  } else {
    std::ostringstream os;
    os << "launch failed: " << failures.front() << "; remaining ranks were terminated";
    report.message = os.str();
  }
  return report;
}

} // namespace bks
