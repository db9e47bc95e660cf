#pragma once

#include <stdexcept>
#include <string>

namespace ffabic {

// Error taxonomy shared by the core and mirrored by the C API status codes.
struct input_error : std::runtime_error {
    explicit input_error(const std::string& m) : std::runtime_error(m) {}
};
struct config_error : std::runtime_error {
    explicit config_error(const std::string& m) : std::runtime_error(m) {}
};
struct contract_error : std::runtime_error {
    explicit contract_error(const std::string& m) : std::runtime_error(m) {}
};
struct format_error : std::runtime_error {
    explicit format_error(const std::string& m) : std::runtime_error(m) {}
};
struct model_error : std::runtime_error {
    explicit model_error(const std::string& m) : std::runtime_error(m) {}
};
struct state_error : std::runtime_error {
    explicit state_error(const std::string& m) : std::runtime_error(m) {}
};
struct io_error : std::runtime_error {
    explicit io_error(const std::string& m) : std::runtime_error(m) {}
};
struct integrity_error : std::runtime_error {
    explicit integrity_error(const std::string& m) : std::runtime_error(m) {}
};
struct range_error_rd : std::runtime_error {
    explicit range_error_rd(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace ffabic
