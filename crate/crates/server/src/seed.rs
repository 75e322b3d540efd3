//! Demo data for `--seed-demo`.

use splitledger_core::events::NewEvent;
use splitledger_core::payments::NewCard;
use splitledger_core::{Ledger, Money, SplitRule};

pub const DEMO_PASSWORD: &str = "demo-password";

const USERS: [(&str, &str); 4] = [("alice", "Alice"), ("bob", "Bob"), ("carol", "Carol"), ("dave", "Dave")];

/// Seeds once; returns false when the demo users already exist.
pub fn seed_demo(ledger: &Ledger) -> anyhow::Result<bool> {
    if ledger.auth.find_by_username("alice")?.is_some() {
        return Ok(false);
    }
    let mut ids = Vec::new();
    for (username, display) in USERS {
        let grant = ledger.auth.signup(display, username, &format!("{username}@example.com"), DEMO_PASSWORD)?;
        ids.push(grant.user.id);
    }
    let alice = &ids[0];
    for (friend, (username, _)) in ids.iter().zip(USERS).skip(1) {
        let request = ledger.social.send_friend_request(alice, username)?;
        ledger.social.respond_friend_request(friend, &request.id, true)?;
    }
    for (i, user) in ids.iter().enumerate() {
        // Dave's card ends in the mock gateway's decline suffix.
        let pan = if i == 3 { "4000000000000002" } else { "4242424242424242" };
        ledger.payments.add_card(
            user,
            NewCard {
                pan: pan.into(),
                expiry_month: 12,
                expiry_year: 2099,
                holder_name: USERS[i].1.into(),
                cvv: "123".into(),
            },
        )?;
    }
    ledger.events.create_event(
        alice,
        NewEvent {
            title: "Team dinner".into(),
            description: "Thai place on 5th".into(),
            total: Money::from_minor(12_000)?,
            rule: SplitRule::Equal,
            invitees: vec![ids[1].clone(), ids[2].clone()],
        },
    )?;
    Ok(true)
}
