use std::sync::Arc;

use crate::auth::{AuthConfig, AuthService};
use crate::clock::{Clock, SystemClock};
use crate::events::{EventService, ParticipationStatus};
use crate::notify::{Notifier, NullNotifier};
use crate::payments::{idempotency_key, FailPoint, GatewayClient, MockGateway, PaymentError, PaymentService};
use crate::schema;
use crate::social::SocialService;
use crate::storage::{MemoryStore, Store, StoreError};

/// Every service, wired to one store.
pub struct Ledger {
    pub store: Arc<dyn Store>,
    pub auth: Arc<AuthService>,
    pub social: Arc<SocialService>,
    pub events: Arc<EventService>,
    pub payments: Arc<PaymentService>,
}

pub struct LedgerOptions {
    pub clock: Arc<dyn Clock>,
    pub notifier: Arc<dyn Notifier>,
    pub gateway: Arc<dyn GatewayClient>,
    pub auth: AuthConfig,
    pub fail_point: Option<FailPoint>,
}

impl Default for LedgerOptions {
    fn default() -> Self {
        LedgerOptions {
            clock: Arc::new(SystemClock),
            notifier: Arc::new(NullNotifier),
            gateway: Arc::new(MockGateway::default()),
            auth: AuthConfig::default(),
            fail_point: None,
        }
    }
}

#[derive(Debug, Default, PartialEq, Eq)]
pub struct RepairReport {
    /// Succeeded payments whose share was not yet marked paid.
    pub reapplied: usize,
    /// Reservations left behind by a charge that never completed.
    pub released: usize,
}

impl Ledger {
    pub fn new(store: Arc<dyn Store>, options: LedgerOptions) -> Self {
        let LedgerOptions { clock, notifier, gateway, auth, fail_point } = options;
        let auth = Arc::new(AuthService::new(store.clone(), clock.clone(), auth));
        let social = Arc::new(SocialService::new(store.clone(), auth.clone(), clock.clone(), notifier.clone()));
        let events = Arc::new(EventService::new(store.clone(), auth.clone(), social.clone(), clock.clone(), notifier));
        let payments = Arc::new(
            PaymentService::new(store.clone(), events.clone(), gateway, clock).with_fail_point(fail_point),
        );
        Ledger { store, auth, social, events, payments }
    }

    pub fn in_memory(options: LedgerOptions) -> Self {
        Ledger::new(Arc::new(MemoryStore::new(schema::indexes())), options)
    }

    /// Finishes payment workflows interrupted by a crash. Run once at startup,
    /// before serving requests.
    pub fn repair(&self) -> Result<RepairReport, PaymentError> {
        let mut report = RepairReport::default();
        let succeeded = self.payments.succeeded_payments()?;
        for payment in &succeeded {
            let Some(p) = self.events.participation(&payment.event_id, &payment.payer)? else {
                continue;
            };
            if p.status == ParticipationStatus::Confirmed {
                self.events.apply_payment(&payment.event_id, &payment.payer, &payment.id, payment.amount)?;
                log::warn!("re-applied payment {} to event {}", payment.id, payment.event_id);
                report.reapplied += 1;
            }
        }
        for p in self.events.all_participations()? {
            let Some(pending) = p.pending_payment.clone() else {
                continue;
            };
            let key = idempotency_key(&p.event_id, &p.member);
            if succeeded.iter().any(|s| s.idempotency_key == key) {
                continue;
            }
            self.events.release_payment(&p.event_id, &p.member, &pending)?;
            log::warn!("released stale payment reservation {pending} on event {}", p.event_id);
            report.released += 1;
        }
        Ok(report)
    }

    pub fn flush(&self) -> Result<(), StoreError> {
        self.store.flush()
    }
}
