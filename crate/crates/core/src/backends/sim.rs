use super::toy::parse_goal;
use super::{BackendError, FocusedProver, ProverBudget, ProverOutcome};

/// Focused prover for toy goals. Decides the equality by evaluation; each
/// operator node costs one simulation, so goals with more operators than the
/// budget allows come back as failures.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimulatedProver;

pub const BUDGET_EXHAUSTED: &str = "budget exhausted";

impl FocusedProver for SimulatedProver {
    fn prove(&self, goal_text: &str, budget: &ProverBudget, _seed: u64) -> Result<ProverOutcome, BackendError> {
        if goal_text.trim().is_empty() {
            return Err(BackendError::InvalidRequest("goal text is empty".into()));
        }
        let goal = match parse_goal(goal_text) {
            Ok(goal) => goal,
            Err(e) => return Ok(ProverOutcome::failed(format!("unparseable goal: {e}"))),
        };
        let steps = goal.op_count();
        if steps > budget.simulations as usize {
            return Ok(ProverOutcome::failed(format!(
                "{BUDGET_EXHAUSTED} ({steps} reduction steps needed, {} allowed)",
                budget.simulations
            )));
        }
        match (goal.lhs.eval(), goal.rhs.eval()) {
            (Ok(l), Ok(r)) if l == r => Ok(ProverOutcome::proved("eval")),
            (Ok(l), Ok(r)) => Ok(ProverOutcome::disproved(format!("eval: {l} ≠ {r}"))),
            (Err(e), _) | (_, Err(e)) => Ok(ProverOutcome::failed(e)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::ProverVerdict;

    fn budget(simulations: u32) -> ProverBudget {
        ProverBudget {
            simulations,
            timeout_ms: 1000,
        }
    }

    #[test]
    fn decides_small_goals() {
        let p = SimulatedProver;
        let proved = p.prove("⊢ 3*3 = 9", &budget(400), 0).unwrap();
        assert_eq!(proved, ProverOutcome::proved("eval"));
        let disproved = p.prove("⊢ 3*3 = 10", &budget(400), 0).unwrap();
        assert_eq!(disproved.verdict, ProverVerdict::Disproved);
        assert!(disproved.script.is_some());
    }

    #[test]
    fn oversized_goal_exhausts_budget() {
        // 401 additions: one more operator node than the budget allows
        let lhs = vec!["1"; 402].join("+");
        let goal = format!("⊢ {lhs} = 402");
        let out = SimulatedProver.prove(&goal, &budget(400), 0).unwrap();
        assert_eq!(out.verdict, ProverVerdict::Failed);
        assert!(out.feedback.unwrap().contains(BUDGET_EXHAUSTED));
        let fits = vec!["1"; 401].join("+");
        let out = SimulatedProver
            .prove(&format!("⊢ {fits} = 401"), &budget(400), 0)
            .unwrap();
        assert_eq!(out.verdict, ProverVerdict::Proved);
    }

    #[test]
    fn empty_goal_is_rejected() {
        assert!(SimulatedProver.prove("  ", &budget(1), 0).is_err());
        let out = SimulatedProver.prove("⊢ x = 1", &budget(10), 0).unwrap();
        assert_eq!(out.verdict, ProverVerdict::Failed);
    }
}
