use walling_core::fsm::{ControllerFsmState, FsmState, Symbol};

/// The transition table written out case by case, independent of the
/// implementation's control flow.
pub fn expected(current: ControllerFsmState, bits: u8) -> ControllerFsmState {
    let has = |s: Symbol| bits & (1 << (s as u8)) != 0;
    let mut next = current;
    next.avoid_nestmate = false;
    match (current.state, has(Symbol::NonNestmateEncounter), has(Symbol::NestmateEncounter)) {
        (FsmState::Moving, true, _) => {
            next.state = FsmState::Walling;
            next.walling_timer_remaining = current.walling_timer_duration;
        }
        (FsmState::Moving, false, true) => next.avoid_nestmate = true,
        (FsmState::Moving, false, false) => {}
        (FsmState::Walling, ..) => {
            if has(Symbol::MovingNestmateEncounter) {
                next.walling_timer_remaining = current.walling_timer_duration;
            } else if has(Symbol::WallingTimerExpired) {
                next.state = FsmState::AvoidNonNestmate;
            }
        }
        (FsmState::AvoidNonNestmate, ..) => {
            if has(Symbol::AboveSafeDist) && !has(Symbol::BelowSafeDist) {
                next.state = FsmState::Moving;
            }
        }
    }
    next
}
