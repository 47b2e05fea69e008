#include "fedlab/common.hpp"

#include <cstdio>

namespace fedlab {

namespace {

void default_warn(const std::string& msg) { std::fprintf(stderr, "[warn] %s\n", msg.c_str()); }

void (*g_warn)(const std::string&) = default_warn;

} // namespace

void warn(const std::string& msg) { g_warn(msg); }

void set_warn_handler(void (*handler)(const std::string&)) {
    g_warn = handler ? handler : default_warn;
}

} // namespace fedlab
