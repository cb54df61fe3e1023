// Power of TOST and the folded-normal test at three standard-error levels,
// printed on a coarse grid.

#include <cstdio>

#include "beq/equivalence.hpp"
#include "beq/harness.hpp"

int main() {
    using namespace beq;
    const EquivalenceMargin margin = EquivalenceMargin::standard();
    const double extreme = margin.delta() / normal_quantile(0.95);
    for (double sigma : {0.07, 0.12, extreme}) {
        std::printf("sigma_P = %.4f\n     d    TOST     BOT\n", sigma);
        for (const PowerPoint& p : power_curve(sigma, margin, 0.05, linear_grid(-0.3, 0.3, 13)))
            std::printf("%6.3f  %6.4f  %6.4f\n", p.d, p.tost, p.bot);
        std::printf("\n");
    }
}
