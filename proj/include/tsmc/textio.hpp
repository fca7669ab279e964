#ifndef TSMC_TEXTIO_HPP_
#define TSMC_TEXTIO_HPP_

#include <string>

namespace tsmc {

// Fixed 12-significant-digit rendering used by every CSV/JSONL emitter, so
// reruns with the same seed are byte-identical.
std::string format_sig(double v, int digits = 12);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace tsmc

#endif  // TSMC_TEXTIO_HPP_
