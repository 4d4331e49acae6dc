//! Small fixture nets shared by unit and integration tests.

use crate::petri::{Label, PlaceId, TransitionId, WFNet, WFNetBuilder};

/// Three-place ordering net: after `a` (or a silent skip), choose `b` or `c`.
///
/// Returns the net plus place ids `[p1, p2, p3]` and transition ids
/// `[t1(a), t2(tau), t3(b), t4(c)]`.
pub fn n1() -> (WFNet, [PlaceId; 3], [TransitionId; 4]) {
    let mut b = WFNetBuilder::new();
    let p1 = b.place("p1");
    let p2 = b.place("p2");
    let p3 = b.place("p3");
    let t1 = b.transition("t1", Label::Activity("a".into()));
    let t2 = b.transition("t2", Label::Tau);
    let t3 = b.transition("t3", Label::Activity("b".into()));
    let t4 = b.transition("t4", Label::Activity("c".into()));
    b.arc_pt(p1, t1)
        .arc_tp(t1, p2)
        .arc_pt(p1, t2)
        .arc_tp(t2, p2)
        .arc_pt(p2, t3)
        .arc_tp(t3, p3)
        .arc_pt(p2, t4)
        .arc_tp(t4, p3);
    (b.build().expect("fixture net is a WF-net"), [p1, p2, p3], [t1, t2, t3, t4])
}
