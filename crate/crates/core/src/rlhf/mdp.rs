use crate::diffusion::Trajectory;
use crate::nn::Mat;

/// `s_t = (c, t, z_t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MdpState {
    pub cond: usize,
    pub t: usize,
    pub z: Mat,
}

/// Reads a stored chain as an episodic MDP: the action at `s_t` is
/// `z_{t-1}`, transitions are deterministic bookkeeping, and the only
/// reward arrives on reaching `t = 0`.
#[derive(Clone, Copy, Debug)]
pub struct MdpView<'a> {
    traj: &'a Trajectory,
}

impl<'a> MdpView<'a> {
    pub fn new(traj: &'a Trajectory) -> Self {
        assert_eq!(traj.states.len(), traj.steps() + 1, "trajectory was sampled without recording");
        Self { traj }
    }

    pub fn horizon(&self) -> usize {
        self.traj.steps()
    }

    /// `ρ_0`: the prompt, `t = T` and the initial noise.
    pub fn initial_state(&self) -> MdpState {
        self.state(self.horizon())
    }

    pub fn state(&self, t: usize) -> MdpState {
        MdpState { cond: self.traj.cond, t, z: self.traj.states[self.horizon() - t].clone() }
    }

    /// `a_t = z_{t-1}` for `t = 1..=T`.
    pub fn action(&self, t: usize) -> &'a Mat {
        self.traj.transition(t).1
    }

    /// Stored `log π(a_t | s_t)`.
    pub fn log_policy(&self, t: usize) -> f64 {
        self.traj.transition(t).3
    }

    /// `R(s_t, a_t)`: `terminal` at `t = 0`, zero elsewhere.
    pub fn reward(t: usize, terminal: f64) -> f64 {
        if t == 0 {
            terminal
        } else {
            0.0
        }
    }

    /// The deterministic transition: the action becomes the next latent.
    pub fn step(state: &MdpState, action: &Mat) -> MdpState {
        assert!(state.t >= 1, "no action after the terminal state");
        MdpState { cond: state.cond, t: state.t - 1, z: action.clone() }
    }

    /// Rolls the stored actions forward from `ρ_0`; returns `s_T, ..., s_0`.
    pub fn replay(&self) -> Vec<MdpState> {
        let mut s = self.initial_state();
        let mut out = vec![s.clone()];
        for t in (1..=self.horizon()).rev() {
            s = Self::step(&s, self.action(t));
            out.push(s.clone());
        }
        out
    }
}
